//! Seeded shot-by-shot sampling of the optical experiments.
//!
//! Every shot draws from its own deterministic substream derived from
//! (seed, shot index), so merged results are independent of how shot
//! batches are partitioned across threads. Per-shot element jitter is
//! redrawn each shot. No-click events are discarded, never imputed; the
//! detected counts are a fair sample of the emitted shots.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bell::{noisy_state, BipartiteState};
use crate::qmath::{CMat, CVec3, C64};
use crate::{Error, Result};

use super::device::{joint_probs_with, CascadeApparatus, MeasurementDevice, MINUS_PATH};
use super::elements::{apply_circuit, OpticalElement};

/// Detector efficiency, element jitter, and source visibility.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Probability that a photon reaching a detector produces a click.
    #[serde(default = "one")]
    pub detector_efficiency: f64,
    /// Per-shot Gaussian jitter of every wedge phase, radians.
    #[serde(default)]
    pub wedge_phase_jitter_sigma: f64,
    /// Per-shot Gaussian jitter of every beam-splitter transmittance.
    #[serde(default)]
    pub bs_transmittance_error_sigma: f64,
    /// Visibility of the two-photon source.
    #[serde(default = "one")]
    pub source_visibility: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            detector_efficiency: 1.0,
            wedge_phase_jitter_sigma: 0.0,
            bs_transmittance_error_sigma: 0.0,
            source_visibility: 1.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return Err(Error::InvalidDescriptor {
                reason: format!("detector efficiency {} out of [0, 1]", self.detector_efficiency),
            });
        }
        if self.wedge_phase_jitter_sigma < 0.0 || self.bs_transmittance_error_sigma < 0.0 {
            return Err(Error::InvalidDescriptor {
                reason: "jitter sigmas must be nonnegative".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.source_visibility) {
            return Err(Error::VisibilityOutOfRange(self.source_visibility));
        }
        Ok(())
    }

    fn has_jitter(&self) -> bool {
        self.wedge_phase_jitter_sigma > 0.0 || self.bs_transmittance_error_sigma > 0.0
    }
}

/// What enters the apparatus each shot.
#[derive(Clone, Debug)]
pub enum Preparation {
    /// A pure qutrit built from path a by its preparation circuit.
    Pure(CVec3),
    /// A fresh uniformly random basis state each shot.
    MaximallyMixed,
    /// The three-crystal pair source; visibility comes from the noise
    /// model.
    TwoPhotonSource,
}

#[derive(Clone, Debug)]
pub enum Apparatus {
    Single(MeasurementDevice),
    Cascade(CascadeApparatus),
    TwoParty {
        alice: MeasurementDevice,
        bob: MeasurementDevice,
    },
}

/// Detector click totals from one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub counts: BTreeMap<String, u64>,
    pub shots_emitted: u64,
    pub shots_detected: u64,
    pub seed: u64,
}

/// The ideal source state: `entangled_state()` at `v = 1`, the noisy
/// mixture below. Shot sampling draws the entangled component with
/// probability `v` and a uniformly random crystal-pair basis state
/// `|jk>` otherwise.
pub fn two_photon_source(v: f64) -> Result<BipartiteState> {
    noisy_state(v)
}

/// A fully specified run: preparation, apparatus, noise, seed.
#[derive(Clone, Debug)]
pub struct ShotRun {
    prep: PrepKind,
    apparatus: Apparatus,
    noise: NoiseModel,
    seed: u64,
}

#[derive(Clone, Debug)]
enum PrepKind {
    Circuit(Vec<OpticalElement>),
    Mixed,
    Source,
}

impl ShotRun {
    pub fn new(
        prep: Preparation,
        apparatus: Apparatus,
        noise: NoiseModel,
        seed: u64,
    ) -> Result<Self> {
        noise.validate()?;
        let two_party = matches!(apparatus, Apparatus::TwoParty { .. });
        let prep = match prep {
            Preparation::Pure(target) => {
                if two_party {
                    return Err(Error::InvalidDescriptor {
                        reason: "a two-party apparatus needs the two-photon source".into(),
                    });
                }
                PrepKind::Circuit(super::device::prepare_state_circuit(&target)?)
            }
            Preparation::MaximallyMixed => {
                if two_party {
                    return Err(Error::InvalidDescriptor {
                        reason: "a two-party apparatus needs the two-photon source".into(),
                    });
                }
                PrepKind::Mixed
            }
            Preparation::TwoPhotonSource => {
                if !two_party {
                    return Err(Error::InvalidDescriptor {
                        reason: "the two-photon source needs a two-party apparatus".into(),
                    });
                }
                PrepKind::Source
            }
        };
        Ok(ShotRun {
            prep,
            apparatus,
            noise,
            seed,
        })
    }

    pub fn detector_labels(&self) -> Vec<&'static str> {
        match self.apparatus {
            Apparatus::Single(_) => vec!["-1", "+1"],
            _ => vec!["-1,-1", "-1,+1", "+1,-1", "+1,+1"],
        }
    }

    fn component_count(&self) -> usize {
        match self.prep {
            PrepKind::Circuit(_) => 1,
            PrepKind::Mixed => 3,
            PrepKind::Source => 10,
        }
    }

    /// Draws the shot's source/preparation component. The draw pattern
    /// depends only on the configuration, never on earlier outcomes.
    fn draw_component(&self, rng: &mut ChaCha8Rng) -> usize {
        match self.prep {
            PrepKind::Circuit(_) => 0,
            PrepKind::Mixed => rng.random_range(0..3),
            PrepKind::Source => {
                let v = self.noise.source_visibility;
                if v >= 1.0 {
                    0
                } else if rng.random::<f64>() < v {
                    0
                } else {
                    let j = rng.random_range(0..3usize);
                    let k = rng.random_range(0..3usize);
                    1 + 3 * j + k
                }
            }
        }
    }

    /// Detector probabilities for one component, optionally with
    /// per-shot jittered optics.
    fn component_probs(&self, comp: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
        let noise = &self.noise;
        let mut jitter_rng = rng;
        let mut jitter = |elems: &[OpticalElement]| -> Vec<OpticalElement> {
            match jitter_rng.as_deref_mut() {
                Some(r) if noise.has_jitter() => jitter_elements(elems, noise, r),
                _ => elems.to_vec(),
            }
        };

        match (&self.prep, &self.apparatus) {
            (prep, Apparatus::Single(dev)) => {
                let input = self.single_input(prep, comp, &mut jitter);
                let out = apply_circuit(&jitter(&dev.circuit), &input);
                vec![
                    out.0[MINUS_PATH].norm_sqr(),
                    out.0[1].norm_sqr() + out.0[2].norm_sqr(),
                ]
            }
            (prep, Apparatus::Cascade(casc)) => {
                let input = self.single_input(prep, comp, &mut jitter);
                let first = jitter(&casc.first.circuit);
                let remap_minus = jitter(&casc.first.remap);
                let remap_plus = jitter(&casc.first.remap);
                let second_minus = jitter(&casc.second.circuit);
                let second_plus = jitter(&casc.second.circuit);
                joint_probs_with(
                    &input,
                    &first,
                    &remap_minus,
                    &remap_plus,
                    &second_minus,
                    &second_plus,
                )
                .to_vec()
            }
            (PrepKind::Source, Apparatus::TwoParty { alice, bob }) => {
                let coeff = source_component_coefficients(comp);
                let ua = jitter(&alice.circuit);
                let ub = jitter(&bob.circuit);
                let coeff = apply_alice_circuit(&ua, &coeff);
                let coeff = apply_bob_circuit(&ub, &coeff);
                two_party_probs(&coeff).to_vec()
            }
            _ => unreachable!("preparation/apparatus combinations validated in new()"),
        }
    }

    fn single_input(
        &self,
        prep: &PrepKind,
        comp: usize,
        jitter: &mut impl FnMut(&[OpticalElement]) -> Vec<OpticalElement>,
    ) -> CVec3 {
        match prep {
            PrepKind::Circuit(circuit) => apply_circuit(&jitter(circuit), &CVec3::basis(0)),
            PrepKind::Mixed => CVec3::basis(comp),
            PrepKind::Source => unreachable!(),
        }
    }

    pub fn run(&self, n: u64) -> Result<CountTable> {
        self.run_with_jobs(n, 1)
    }

    /// Runs `n` shots split across `jobs` threads. Each shot samples from
    /// the substream `(seed, shot index)`, so the merged table does not
    /// depend on the partitioning.
    pub fn run_with_jobs(&self, n: u64, jobs: usize) -> Result<CountTable> {
        if n == 0 {
            return Err(Error::InvalidDescriptor {
                reason: "shot count must be at least 1".into(),
            });
        }
        let cached: Option<Vec<Vec<f64>>> = if self.noise.has_jitter() {
            None
        } else {
            Some(
                (0..self.component_count())
                    .map(|c| self.component_probs(c, None))
                    .collect(),
            )
        };

        let jobs = jobs.max(1).min(n as usize);
        let chunk = n.div_ceil(jobs as u64);
        let mut partials = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs as u64)
                .map(|c| {
                    let lo = c * chunk;
                    let hi = ((c + 1) * chunk).min(n);
                    let cached = cached.as_ref();
                    scope.spawn(move || self.run_range(lo..hi, cached))
                })
                .collect();
            for h in handles {
                partials.push(h.join().expect("shot worker panicked"));
            }
        });

        let labels = self.detector_labels();
        let mut counts: BTreeMap<String, u64> =
            labels.iter().map(|l| (l.to_string(), 0)).collect();
        let mut detected = 0;
        for p in partials {
            for (label, c) in p.0 {
                *counts.get_mut(&label).expect("known detector label") += c;
            }
            detected += p.1;
        }
        Ok(CountTable {
            counts,
            shots_emitted: n,
            shots_detected: detected,
            seed: self.seed,
        })
    }

    fn run_range(
        &self,
        range: std::ops::Range<u64>,
        cached: Option<&Vec<Vec<f64>>>,
    ) -> (BTreeMap<String, u64>, u64) {
        let labels = self.detector_labels();
        let mut counts: BTreeMap<String, u64> =
            labels.iter().map(|l| (l.to_string(), 0)).collect();
        let mut detected = 0u64;
        let base = ChaCha8Rng::seed_from_u64(self.seed);
        let eta = self.noise.detector_efficiency;
        let coincidence = matches!(self.apparatus, Apparatus::TwoParty { .. });

        for shot in range {
            let mut rng = base.clone();
            rng.set_stream(shot);

            let comp = self.draw_component(&mut rng);
            let probs_owned;
            let probs: &[f64] = match cached {
                Some(tables) => &tables[comp],
                None => {
                    probs_owned = self.component_probs(comp, Some(&mut rng));
                    &probs_owned
                }
            };

            let u = rng.random::<f64>();
            let mut acc = 0.0;
            let mut hit = probs.len() - 1;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    hit = k;
                    break;
                }
            }

            let clicked = if eta >= 1.0 {
                true
            } else if coincidence {
                let a = rng.random::<f64>() < eta;
                let b = rng.random::<f64>() < eta;
                a && b
            } else {
                rng.random::<f64>() < eta
            };
            if clicked {
                *counts.get_mut(labels[hit]).expect("label") += 1;
                detected += 1;
            }
        }
        (counts, detected)
    }
}

fn jitter_elements(
    elements: &[OpticalElement],
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Vec<OpticalElement> {
    elements
        .iter()
        .map(|e| match e {
            OpticalElement::BeamSplitter {
                paths,
                transmittance,
            } if noise.bs_transmittance_error_sigma > 0.0 => {
                let normal = Normal::new(0.0, noise.bs_transmittance_error_sigma)
                    .expect("sigma validated");
                OpticalElement::BeamSplitter {
                    paths: *paths,
                    transmittance: (transmittance + normal.sample(rng)).clamp(0.0, 1.0),
                }
            }
            OpticalElement::Wedge { path, phase } if noise.wedge_phase_jitter_sigma > 0.0 => {
                let normal =
                    Normal::new(0.0, noise.wedge_phase_jitter_sigma).expect("sigma validated");
                OpticalElement::Wedge {
                    path: *path,
                    phase: phase + normal.sample(rng),
                }
            }
            other => *other,
        })
        .collect()
}

/// Coefficient matrix `c[j][k]` of the two-photon amplitude
/// `sum c_jk |j>_A |k>_B` for one source component.
fn source_component_coefficients(comp: usize) -> CMat {
    let mut c = CMat::zeros(3);
    if comp == 0 {
        let amp = C64::new(1.0 / 3.0_f64.sqrt(), 0.0);
        for k in 0..3 {
            *c.at_mut(k, k) = amp;
        }
    } else {
        let j = (comp - 1) / 3;
        let k = (comp - 1) % 3;
        *c.at_mut(j, k) = C64::ONE;
    }
    c
}

fn apply_alice_circuit(elements: &[OpticalElement], coeff: &CMat) -> CMat {
    let mut out = coeff.clone();
    for q in 0..3 {
        let col = CVec3([out.at(0, q), out.at(1, q), out.at(2, q)]);
        let new = apply_circuit(elements, &col);
        for p in 0..3 {
            *out.at_mut(p, q) = new.0[p];
        }
    }
    out
}

fn apply_bob_circuit(elements: &[OpticalElement], coeff: &CMat) -> CMat {
    let mut out = coeff.clone();
    for p in 0..3 {
        let row = CVec3([out.at(p, 0), out.at(p, 1), out.at(p, 2)]);
        let new = apply_circuit(elements, &row);
        for q in 0..3 {
            *out.at_mut(p, q) = new.0[q];
        }
    }
    out
}

/// Coincidence probabilities for the four outcome pairs, OUTCOME_PAIRS
/// order: path a is -1 on each side.
fn two_party_probs(coeff: &CMat) -> [f64; 4] {
    let weight = |p: usize, q: usize| coeff.at(p, q).norm_sqr();
    let p_mm = weight(0, 0);
    let p_mp = weight(0, 1) + weight(0, 2);
    let p_pm = weight(1, 0) + weight(2, 0);
    let p_pp = weight(1, 1) + weight(1, 2) + weight(2, 1) + weight(2, 2);
    [p_mm, p_mp, p_pm, p_pp]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photonics::device::{build_device, cascade};
    use crate::rays::RayCatalog;
    use crate::sequential::{luders_joint, OUTCOME_PAIRS};

    fn run_single(
        cat: &RayCatalog,
        prep: Preparation,
        index: u32,
        noise: NoiseModel,
        seed: u64,
        n: u64,
    ) -> CountTable {
        let dev = build_device(cat, index).unwrap();
        ShotRun::new(prep, Apparatus::Single(dev), noise, seed)
            .unwrap()
            .run(n)
            .unwrap()
    }

    #[test]
    fn eigenstate_always_clicks_minus() {
        let cat = RayCatalog::builtin();
        let ray = *cat.ray(6).unwrap();
        let table = run_single(
            &cat,
            Preparation::Pure(ray),
            6,
            NoiseModel::default(),
            1,
            5000,
        );
        assert_eq!(table.counts["-1"], 5000);
        assert_eq!(table.counts["+1"], 0);
        assert_eq!(table.shots_detected, 5000);
    }

    #[test]
    fn same_seed_reproduces_table_exactly() {
        let cat = RayCatalog::builtin();
        let noise = NoiseModel {
            detector_efficiency: 0.8,
            wedge_phase_jitter_sigma: 0.02,
            bs_transmittance_error_sigma: 0.01,
            source_visibility: 1.0,
        };
        let a = run_single(&cat, Preparation::MaximallyMixed, 4, noise, 7, 4000);
        let b = run_single(&cat, Preparation::MaximallyMixed, 4, noise, 7, 4000);
        assert_eq!(a, b);
        let c = run_single(&cat, Preparation::MaximallyMixed, 4, noise, 8, 4000);
        assert_ne!(a, c);
    }

    #[test]
    fn partitioning_does_not_change_counts() {
        let cat = RayCatalog::builtin();
        let dev = build_device(&cat, 9).unwrap();
        let run = ShotRun::new(
            Preparation::MaximallyMixed,
            Apparatus::Single(dev),
            NoiseModel::default(),
            3,
        )
        .unwrap();
        let seq = run.run_with_jobs(4001, 1).unwrap();
        for jobs in [2, 3, 8] {
            assert_eq!(run.run_with_jobs(4001, jobs).unwrap(), seq);
        }
    }

    #[test]
    fn detector_efficiency_thins_fairly() {
        let cat = RayCatalog::builtin();
        let noise = NoiseModel {
            detector_efficiency: 0.5,
            ..NoiseModel::default()
        };
        let n = 40_000u64;
        let table = run_single(&cat, Preparation::MaximallyMixed, 4, noise, 11, n);
        let ratio = table.shots_detected as f64 / table.shots_emitted as f64;
        let sigma = (0.5 * 0.5 / n as f64).sqrt();
        assert!((ratio - 0.5).abs() <= 5.0 * sigma, "ratio {ratio}");
    }

    #[test]
    fn cascade_frequencies_match_luders() {
        let cat = RayCatalog::builtin();
        let casc = cascade(build_device(&cat, 1).unwrap(), build_device(&cat, 6).unwrap());
        let target = *cat.ray(9).unwrap();
        let n = 50_000u64;
        let run = ShotRun::new(
            Preparation::Pure(target),
            Apparatus::Cascade(casc),
            NoiseModel::default(),
            21,
        )
        .unwrap();
        let table = run.run(n).unwrap();
        let exact = luders_joint(&target.outer(), &cat, 1, 6).unwrap();
        for (a, b) in OUTCOME_PAIRS {
            let key = format!(
                "{},{}",
                if a == 1 { "+1" } else { "-1" },
                if b == 1 { "+1" } else { "-1" }
            );
            let p = exact.prob(a, b);
            let freq = table.counts[&key] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1e-4);
            assert!(
                (freq - p).abs() <= 5.0 * sigma,
                "outcome {key}: freq {freq} vs exact {p}"
            );
        }
    }

    #[test]
    fn two_party_source_correlates_perfectly_at_unit_visibility() {
        let cat = RayCatalog::builtin();
        let alice = build_device(&cat, 7).unwrap();
        let bob = build_device(&cat, 7).unwrap();
        let run = ShotRun::new(
            Preparation::TwoPhotonSource,
            Apparatus::TwoParty { alice, bob },
            NoiseModel::default(),
            5,
        )
        .unwrap();
        let table = run.run(20_000).unwrap();
        assert_eq!(table.counts["-1,+1"], 0);
        assert_eq!(table.counts["+1,-1"], 0);
        // P(-1,-1) = 1/3 on the maximally entangled state.
        let f = table.counts["-1,-1"] as f64 / 20_000.0;
        assert!((f - 1.0 / 3.0).abs() <= 5.0 * (2.0 / 9.0 / 20_000.0f64).sqrt());
    }

    #[test]
    fn source_visibility_decorrelates() {
        let cat = RayCatalog::builtin();
        let alice = build_device(&cat, 11).unwrap();
        let bob = build_device(&cat, 11).unwrap();
        let noise = NoiseModel {
            source_visibility: 0.0,
            ..NoiseModel::default()
        };
        let n = 30_000u64;
        let run = ShotRun::new(
            Preparation::TwoPhotonSource,
            Apparatus::TwoParty { alice, bob },
            noise,
            9,
        )
        .unwrap();
        let table = run.run(n).unwrap();
        // <A (x) B> on 1/9 is tr(A)^2/9 = 1/9.
        let mut m = 0.0;
        for (key, c) in &table.counts {
            let sign = |s: &str| if s.starts_with('+') { 1.0 } else { -1.0 };
            let (a, b) = key.split_once(',').unwrap();
            m += sign(a) * sign(b) * (*c as f64);
        }
        m /= table.shots_detected as f64;
        let sigma = (1.0f64 / n as f64).sqrt();
        assert!((m - 1.0 / 9.0).abs() <= 5.0 * sigma, "estimate {m}");
    }

    #[test]
    fn jittered_run_is_deterministic_and_normalized() {
        let cat = RayCatalog::builtin();
        let noise = NoiseModel {
            wedge_phase_jitter_sigma: 0.1,
            bs_transmittance_error_sigma: 0.05,
            ..NoiseModel::default()
        };
        let casc = cascade(build_device(&cat, 2).unwrap(), build_device(&cat, 7).unwrap());
        let run = ShotRun::new(
            Preparation::Pure(*cat.ray(4).unwrap()),
            Apparatus::Cascade(casc),
            noise,
            77,
        )
        .unwrap();
        let a = run.run(2000).unwrap();
        let b = run.run_with_jobs(2000, 4).unwrap();
        assert_eq!(a, b);
        let total: u64 = a.counts.values().sum();
        assert_eq!(total, a.shots_detected);
        assert_eq!(a.shots_detected, 2000);
    }

    #[test]
    fn preparation_apparatus_mismatch_is_rejected() {
        let cat = RayCatalog::builtin();
        let dev = build_device(&cat, 1).unwrap();
        assert!(ShotRun::new(
            Preparation::TwoPhotonSource,
            Apparatus::Single(dev.clone()),
            NoiseModel::default(),
            0,
        )
        .is_err());
        let bob = build_device(&cat, 5).unwrap();
        assert!(ShotRun::new(
            Preparation::MaximallyMixed,
            Apparatus::TwoParty { alice: dev, bob },
            NoiseModel::default(),
            0,
        )
        .is_err());
    }

    #[test]
    fn source_state_matches_noisy_state() {
        let s = two_photon_source(1.0).unwrap();
        assert!(
            s.rho()
                .max_abs_diff(crate::bell::entangled_state().rho())
                <= 1e-12
        );
        for v in [0.0, 0.5, 0.95] {
            let s = two_photon_source(v).unwrap();
            let third = CMat::identity(3).scaled_re(1.0 / 3.0);
            assert!(s.reduced_alice().max_abs_diff(&third) <= 1e-12);
            assert!(s.reduced_bob().max_abs_diff(&third) <= 1e-12);
        }
        assert!(two_photon_source(1.2).is_err());
    }
}
