//! Two-path optical elements on a three-path qutrit encoding.
//!
//! A beam splitter with transmittance `t` acts on its two paths as
//! `[[sqrt(t), sqrt(1-t)], [sqrt(1-t), -sqrt(t)]]`; wedges carry all
//! phases; reroutes permute paths. Every element induces a 3x3 unitary,
//! and beam splitters are their own inverse under this convention.

use serde::{Deserialize, Serialize};

use crate::qmath::{CMat, CVec3, C64};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OpticalElement {
    BeamSplitter {
        paths: (usize, usize),
        transmittance: f64,
    },
    Wedge {
        path: usize,
        phase: f64,
    },
    Reroute {
        /// Amplitude in path `k` moves to path `perm[k]`.
        perm: [usize; 3],
    },
}

impl OpticalElement {
    pub fn validate(&self) -> Result<()> {
        match self {
            OpticalElement::BeamSplitter {
                paths: (p, q),
                transmittance,
            } => {
                if p == q || *p >= 3 || *q >= 3 {
                    return Err(Error::InvalidElement {
                        reason: format!("beam splitter paths ({p}, {q}) must be two distinct paths"),
                    });
                }
                if !(0.0..=1.0).contains(transmittance) {
                    return Err(Error::InvalidElement {
                        reason: format!("transmittance {transmittance} out of [0, 1]"),
                    });
                }
            }
            OpticalElement::Wedge { path, phase } => {
                if *path >= 3 {
                    return Err(Error::InvalidElement {
                        reason: format!("wedge path {path} out of range"),
                    });
                }
                if !phase.is_finite() {
                    return Err(Error::InvalidElement {
                        reason: "wedge phase must be finite".into(),
                    });
                }
            }
            OpticalElement::Reroute { perm } => {
                let mut seen = [false; 3];
                for &p in perm {
                    if p >= 3 || seen[p] {
                        return Err(Error::InvalidElement {
                            reason: format!("{perm:?} is not a permutation of three paths"),
                        });
                    }
                    seen[p] = true;
                }
            }
        }
        Ok(())
    }

    /// The induced 3x3 unitary.
    pub fn unitary(&self) -> CMat {
        let mut u = CMat::identity(3);
        match self {
            OpticalElement::BeamSplitter {
                paths: (p, q),
                transmittance: t,
            } => {
                let c = t.sqrt();
                let s = (1.0 - t).sqrt();
                *u.at_mut(*p, *p) = C64::new(c, 0.0);
                *u.at_mut(*p, *q) = C64::new(s, 0.0);
                *u.at_mut(*q, *p) = C64::new(s, 0.0);
                *u.at_mut(*q, *q) = C64::new(-c, 0.0);
            }
            OpticalElement::Wedge { path, phase } => {
                *u.at_mut(*path, *path) = C64::from_polar(1.0, *phase);
            }
            OpticalElement::Reroute { perm } => {
                u = CMat::zeros(3);
                for (k, &dst) in perm.iter().enumerate() {
                    *u.at_mut(dst, k) = C64::ONE;
                }
            }
        }
        u
    }

    pub fn inverse(&self) -> OpticalElement {
        match self {
            OpticalElement::BeamSplitter { .. } => *self,
            OpticalElement::Wedge { path, phase } => OpticalElement::Wedge {
                path: *path,
                phase: -phase,
            },
            OpticalElement::Reroute { perm } => {
                let mut inv = [0usize; 3];
                for (k, &dst) in perm.iter().enumerate() {
                    inv[dst] = k;
                }
                OpticalElement::Reroute { perm: inv }
            }
        }
    }

    /// Applies the element to a path-amplitude vector.
    pub fn apply(&self, v: &CVec3) -> CVec3 {
        let mut out = *v;
        match self {
            OpticalElement::BeamSplitter {
                paths: (p, q),
                transmittance: t,
            } => {
                let c = t.sqrt();
                let s = (1.0 - t).sqrt();
                let (vp, vq) = (v.0[*p], v.0[*q]);
                out.0[*p] = vp.scale(c) + vq.scale(s);
                out.0[*q] = vp.scale(s) - vq.scale(c);
            }
            OpticalElement::Wedge { path, phase } => {
                out.0[*path] *= C64::from_polar(1.0, *phase);
            }
            OpticalElement::Reroute { perm } => {
                let mut moved = [C64::ZERO; 3];
                for (k, &dst) in perm.iter().enumerate() {
                    moved[dst] = v.0[k];
                }
                out = CVec3(moved);
            }
        }
        out
    }
}

/// Composed unitary of a circuit; the first element acts first.
pub fn circuit_unitary(elements: &[OpticalElement]) -> CMat {
    elements
        .iter()
        .fold(CMat::identity(3), |acc, e| e.unitary().mul(&acc))
}

/// Applies a circuit front to back.
pub fn apply_circuit(elements: &[OpticalElement], input: &CVec3) -> CVec3 {
    elements.iter().fold(*input, |v, e| e.apply(&v))
}

/// Element-wise inverse in reverse order.
pub fn inverse_circuit(elements: &[OpticalElement]) -> Vec<OpticalElement> {
    elements.iter().rev().map(|e| e.inverse()).collect()
}
