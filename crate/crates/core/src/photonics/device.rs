//! State-preparation circuits and the measurement devices.
//!
//! A device for `A_i` maps `|v_i>` to path a and the +1 eigenspace to
//! paths b and c; its remap (the inverse circuit) restores the standard
//! encoding on the +1 branch, so a cascade of two devices realizes the
//! sequential Lueders statistics at the amplitude level.
//!
//! Three device classes cover the built-in rays: a reroute for basis
//! rays, one beam splitter (plus wedge/reroute) for two-component rays,
//! and a 50:50 splitter followed by a 33:66 splitter for the
//! three-component rays. Arbitrary rays go through the same
//! wedge-then-two-rotations decomposition.

use crate::qmath::{CVec3, C64};
use crate::rays::RayCatalog;
use crate::{Error, Result};

use super::elements::{apply_circuit, inverse_circuit, OpticalElement};

const AMP_EPS: f64 = 1e-12;

/// Path carrying the -1 outcome after a device circuit.
pub const MINUS_PATH: usize = 0;

/// Builds a circuit mapping a photon in path a to `target`, up to a
/// global phase: wedges set the relative phases, two beam splitters set
/// the amplitude weights.
pub fn prepare_state_circuit(target: &CVec3) -> Result<Vec<OpticalElement>> {
    if !target.is_normalized(1e-9) {
        return Err(Error::NotNormalized {
            norm_sq: target.norm_sq(),
        });
    }
    let r: Vec<f64> = target.0.iter().map(|a| a.norm()).collect();
    let mut circuit = Vec::new();

    // Amplitude weights: path a keeps r0 after the first splitter, the
    // second splitter divides the rest between paths b and c.
    if 1.0 - r[0] * r[0] > AMP_EPS {
        circuit.push(OpticalElement::BeamSplitter {
            paths: (0, 1),
            transmittance: (r[0] * r[0]).min(1.0),
        });
        if r[2] > AMP_EPS {
            let rest = 1.0 - r[0] * r[0];
            circuit.push(OpticalElement::BeamSplitter {
                paths: (1, 2),
                transmittance: (r[1] * r[1] / rest).clamp(0.0, 1.0),
            });
        }
    }

    // Phases relative to the first nonzero component.
    let ref_phase = target
        .0
        .iter()
        .find(|a| a.norm() > AMP_EPS)
        .map(|a| a.arg())
        .unwrap_or(0.0);
    for (k, amp) in target.0.iter().enumerate() {
        if amp.norm() > AMP_EPS {
            let delta = amp.arg() - ref_phase;
            if delta.abs() > AMP_EPS {
                circuit.push(OpticalElement::Wedge {
                    path: k,
                    phase: delta,
                });
            }
        }
    }

    let produced = apply_circuit(&circuit, &CVec3::basis(0));
    let overlap = produced.inner(target).norm();
    if (overlap - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidElement {
            reason: format!("preparation circuit overlap {overlap} != 1"),
        });
    }
    Ok(circuit)
}

/// A measurement box: the circuit maps the ray to path a (outcome -1,
/// paths b and c give +1), the remap restores the encoding convention on
/// the way out.
#[derive(Clone, Debug)]
pub struct MeasurementDevice {
    /// Catalog index the device measures, when built from a catalog.
    pub index: Option<u32>,
    pub circuit: Vec<OpticalElement>,
    pub remap: Vec<OpticalElement>,
}

impl MeasurementDevice {
    pub fn from_circuit(index: Option<u32>, circuit: Vec<OpticalElement>) -> Self {
        let remap = inverse_circuit(&circuit);
        MeasurementDevice {
            index,
            circuit,
            remap,
        }
    }

    /// `|<path a| U |v>|`, which must be 1 for the device's own ray.
    pub fn minus_amplitude(&self, input: &CVec3) -> f64 {
        apply_circuit(&self.circuit, input).0[MINUS_PATH].norm()
    }
}

/// Builds the measurement device for catalog ray `i`.
///
/// Basis rays need only a reroute; rays on two paths need one beam
/// splitter (a wedge first when the relative sign is negative) and a
/// reroute to path a; three-component rays get wedges and two beam
/// splitters.
pub fn build_device(catalog: &RayCatalog, i: u32) -> Result<MeasurementDevice> {
    let ray = *catalog.ray(i)?;
    let nonzero: Vec<usize> = (0..3).filter(|&k| ray.0[k].norm() > AMP_EPS).collect();
    let mut circuit = Vec::new();

    // Wedges flattening relative phases onto the first nonzero component.
    let ref_phase = ray.0[nonzero[0]].arg();
    for &k in &nonzero {
        let delta = ray.0[k].arg() - ref_phase;
        if delta.abs() > AMP_EPS {
            circuit.push(OpticalElement::Wedge {
                path: k,
                phase: -delta,
            });
        }
    }

    let r: Vec<f64> = ray.0.iter().map(|a| a.norm()).collect();
    match nonzero.len() {
        1 => {
            let k = nonzero[0];
            if k != MINUS_PATH {
                let mut perm = [0usize, 1, 2];
                perm[k] = MINUS_PATH;
                perm[MINUS_PATH] = k;
                circuit.push(OpticalElement::Reroute { perm });
            }
        }
        2 => {
            let (p, q) = (nonzero[0], nonzero[1]);
            let t = r[p] * r[p] / (r[p] * r[p] + r[q] * r[q]);
            circuit.push(OpticalElement::BeamSplitter {
                paths: (p, q),
                transmittance: t,
            });
            if p != MINUS_PATH {
                let mut perm = [0usize, 1, 2];
                perm[p] = MINUS_PATH;
                perm[MINUS_PATH] = p;
                circuit.push(OpticalElement::Reroute { perm });
            }
        }
        _ => {
            // Merge paths b and c first, then finish onto path a.
            let t_bc = r[1] * r[1] / (r[1] * r[1] + r[2] * r[2]);
            circuit.push(OpticalElement::BeamSplitter {
                paths: (1, 2),
                transmittance: t_bc,
            });
            circuit.push(OpticalElement::BeamSplitter {
                paths: (0, 1),
                transmittance: r[0] * r[0],
            });
        }
    }

    let device = MeasurementDevice::from_circuit(Some(i), circuit);
    let amp = device.minus_amplitude(&ray);
    if (amp - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidElement {
            reason: format!("device for ray {i} maps it to path a with amplitude {amp}"),
        });
    }
    Ok(device)
}

/// Generic fallback: the device is the inverse of the preparation
/// circuit of its ray. Agrees with [`build_device`] up to the outcome
/// map.
pub fn build_device_generic(index: Option<u32>, ray: &CVec3) -> Result<MeasurementDevice> {
    let prep = prepare_state_circuit(ray)?;
    let device = MeasurementDevice::from_circuit(index, inverse_circuit(&prep));
    let amp = device.minus_amplitude(ray);
    if (amp - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidElement {
            reason: format!("generic device maps its ray to path a with amplitude {amp}"),
        });
    }
    Ok(device)
}

/// The four-detector arrangement measuring first one observable, then an
/// identical second device in each outcome branch.
#[derive(Clone, Debug)]
pub struct CascadeApparatus {
    pub first: MeasurementDevice,
    pub second: MeasurementDevice,
}

pub fn cascade(first: MeasurementDevice, second: MeasurementDevice) -> CascadeApparatus {
    CascadeApparatus { first, second }
}

impl CascadeApparatus {
    /// Noiseless detector probabilities for the four outcome pairs in
    /// [`crate::sequential::OUTCOME_PAIRS`] order.
    pub fn joint_probs(&self, input: &CVec3) -> [f64; 4] {
        joint_probs_with(
            input,
            &self.first.circuit,
            &self.first.remap,
            &self.first.remap,
            &self.second.circuit,
            &self.second.circuit,
        )
    }
}

/// Amplitude propagation through a cascade with explicit element lists,
/// so jittered copies of the same optics can be threaded through. The
/// two branches pass separate remap and second-device copies.
pub fn joint_probs_with(
    input: &CVec3,
    first_circuit: &[OpticalElement],
    remap_minus: &[OpticalElement],
    remap_plus: &[OpticalElement],
    second_minus: &[OpticalElement],
    second_plus: &[OpticalElement],
) -> [f64; 4] {
    let after_first = apply_circuit(first_circuit, input);
    let minus_branch = CVec3([after_first.0[0], C64::ZERO, C64::ZERO]);
    let plus_branch = CVec3([C64::ZERO, after_first.0[1], after_first.0[2]]);

    let minus_out = apply_circuit(second_minus, &apply_circuit(remap_minus, &minus_branch));
    let plus_out = apply_circuit(second_plus, &apply_circuit(remap_plus, &plus_branch));

    // OUTCOME_PAIRS order: (-1,-1), (-1,+1), (+1,-1), (+1,+1).
    [
        minus_out.0[0].norm_sqr(),
        minus_out.0[1].norm_sqr() + minus_out.0[2].norm_sqr(),
        plus_out.0[0].norm_sqr(),
        plus_out.0[1].norm_sqr() + plus_out.0[2].norm_sqr(),
    ]
}
