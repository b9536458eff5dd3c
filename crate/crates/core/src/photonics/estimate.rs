//! Turning detector counts into expression estimates, and the
//! descriptor-driven experiment runner behind `simulate`.
//!
//! Each term gets a plug-in estimator from its own run; the combined
//! standard error treats terms as independent, with per-term variance
//! `(1 - m^2)/N` for the +-1 valued outcome estimators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bell::bell_expression;
use crate::inequality::{
    kappa_expression, opt_rat, ratio_f64, InequalityExpression, PairKind, Party, Rational,
};
use crate::qmath::{CMat, CVec3, C64};
use crate::rays::{OrthogonalityGraph, RayCatalog};
use crate::sequential::{luders_joint, sequential_expectation, JointTableJson};
use crate::{Error, Result};

use super::device::{build_device, cascade};
use super::sim::{Apparatus, CountTable, NoiseModel, Preparation, ShotRun};

/// One measured quantity: a single observable, a sequential same-system
/// pair, or a cross-party coincidence pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermSpec {
    Single { party: Party, index: u32 },
    Pair { first: u32, second: u32 },
    Cross { alice: u32, bob: u32 },
}

impl TermSpec {
    pub fn label(&self) -> String {
        match self {
            TermSpec::Single { party, index } => format!("{party}{index}"),
            TermSpec::Pair { first, second } => format!("A{first}*A{second}"),
            TermSpec::Cross { alice, bob } => format!("A{alice}*B{bob}"),
        }
    }
}

/// Which statistic of a count table estimates the term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutcomeStat {
    /// Two-detector run: `<A> = f(+1) - f(-1)`.
    SingleOutcome,
    /// Four-detector run: `<AB> = sum ab f(a,b)`.
    Product,
    /// Four-detector run, first party's marginal.
    MarginalAlice,
    /// Four-detector run, second party's marginal.
    MarginalBob,
}

fn outcome_sign(s: &str) -> Result<f64> {
    match s {
        "+1" => Ok(1.0),
        "-1" => Ok(-1.0),
        other => Err(Error::InvalidDescriptor {
            reason: format!("unknown outcome label {other}"),
        }),
    }
}

/// Plug-in mean and variance-of-mean from a count table.
pub fn estimate_counts(table: &CountTable, stat: OutcomeStat) -> Result<(f64, f64)> {
    let n = table.shots_detected;
    if n == 0 {
        return Err(Error::EmptyCounts("no detected shots".into()));
    }
    let mut mean = 0.0;
    for (key, count) in &table.counts {
        let value = match stat {
            OutcomeStat::SingleOutcome => outcome_sign(key)?,
            _ => {
                let (a, b) = key.split_once(',').ok_or(Error::InvalidDescriptor {
                    reason: format!("expected coincidence label, got {key}"),
                })?;
                match stat {
                    OutcomeStat::Product => outcome_sign(a)? * outcome_sign(b)?,
                    OutcomeStat::MarginalAlice => outcome_sign(a)?,
                    OutcomeStat::MarginalBob => outcome_sign(b)?,
                    OutcomeStat::SingleOutcome => unreachable!(),
                }
            }
        };
        mean += value * (*count as f64);
    }
    mean /= n as f64;
    let variance = (1.0 - mean * mean).max(0.0) / n as f64;
    Ok((mean, variance))
}

/// Combined estimate of a weighted expression.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

fn term_labels(expr: &InequalityExpression) -> Vec<(String, Rational)> {
    let mut out = Vec::new();
    for s in &expr.singles {
        out.push((format!("{}{}", s.party, s.index), s.w));
    }
    for p in &expr.pairs {
        let label = match p.kind {
            PairKind::SameSystem => format!("{}*{}", p.left, p.right),
            PairKind::CrossParty => {
                let (a, b) = if p.left.party == Party::A {
                    (p.left, p.right)
                } else {
                    (p.right, p.left)
                };
                format!("{a}*{b}")
            }
        };
        out.push((label, p.w));
    }
    out
}

/// Plug-in estimator of the whole expression from one count table per
/// term, with independent binomial error propagation.
///
/// Table keys are term labels (`A11`, `A11*A12`, `A1*B5`); the statistic
/// for a single is inferred from the table shape, so marginals of
/// coincidence runs work transparently.
pub fn estimate_expression(
    expr: &InequalityExpression,
    counts: &BTreeMap<String, CountTable>,
) -> Result<Estimate> {
    if counts.is_empty() {
        return Err(Error::EmptyCounts("no count tables supplied".into()));
    }
    let mut value = 0.0;
    let mut var = 0.0;
    for (label, weight) in term_labels(expr) {
        let table = counts
            .get(&label)
            .ok_or_else(|| Error::EmptyCounts(label.clone()))?;
        let stat = if label.contains('*') {
            OutcomeStat::Product
        } else if table.counts.keys().any(|k| k.contains(',')) {
            // A single estimated from a coincidence run.
            if label.starts_with('A') {
                OutcomeStat::MarginalAlice
            } else {
                OutcomeStat::MarginalBob
            }
        } else {
            OutcomeStat::SingleOutcome
        };
        let (m, v) = estimate_counts(table, stat)?;
        let w = ratio_f64(weight);
        value += w * m;
        var += w * w * v;
    }
    Ok(Estimate {
        value,
        stderr: var.sqrt(),
    })
}

/// Input state for single-photon runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StateSpec {
    MaximallyMixed,
    Ray { index: u32 },
    Pure { re: [f64; 3], im: [f64; 3] },
}

impl StateSpec {
    pub fn preparation(&self, catalog: &RayCatalog) -> Result<Preparation> {
        Ok(match self {
            StateSpec::MaximallyMixed => Preparation::MaximallyMixed,
            StateSpec::Ray { index } => Preparation::Pure(*catalog.ray(*index)?),
            StateSpec::Pure { re, im } => {
                let v = CVec3([
                    C64::new(re[0], im[0]),
                    C64::new(re[1], im[1]),
                    C64::new(re[2], im[2]),
                ]);
                if !v.is_normalized(1e-9) {
                    return Err(Error::NotNormalized { norm_sq: v.norm_sq() });
                }
                Preparation::Pure(v)
            }
        })
    }

    /// Density matrix of the prepared state, for exact references.
    pub fn density(&self, catalog: &RayCatalog) -> Result<CMat> {
        Ok(match self {
            StateSpec::MaximallyMixed => CMat::identity(3).scaled_re(1.0 / 3.0),
            StateSpec::Ray { index } => catalog.ray(*index)?.outer(),
            StateSpec::Pure { re, im } => CVec3([
                C64::new(re[0], im[0]),
                C64::new(re[1], im[1]),
                C64::new(re[2], im[2]),
            ])
            .outer(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Kappa,
    Bell,
    SinglePair,
}

impl ExperimentKind {
    fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Kappa => "kappa",
            ExperimentKind::Bell => "bell",
            ExperimentKind::SinglePair => "single_pair",
        }
    }
}

/// The JSON document consumed by `simulate`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentDescriptor {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prep: Option<StateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<TermSpec>>,
    pub shots: u64,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
}

/// Per-term outcome in the simulation report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermReport {
    pub term: String,
    pub estimate: f64,
    pub stderr: f64,
    pub shots_emitted: u64,
    pub shots_detected: u64,
    pub counts: BTreeMap<String, u64>,
}

/// Full, timing-free simulation report; identical invocations are
/// byte-identical.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    pub seed: u64,
    pub shots_per_term: u64,
    pub noise: NoiseModel,
    pub terms: Vec<TermReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_rat")]
    pub claimed_bound: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<JointTableJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compatible: Option<bool>,
}

/// CSV rendering of the per-term table: term, estimate, stderr, shots.
pub fn report_to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("term,estimate,stderr,shots\n");
    for t in &report.terms {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.term, t.estimate, t.stderr, t.shots_detected
        ));
    }
    out
}

fn derive_term_seed(seed: u64, ordinal: u64) -> u64 {
    // splitmix64 step keyed by the term ordinal.
    let mut z = seed
        .wrapping_add((ordinal + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn default_terms(expr: &InequalityExpression) -> Vec<TermSpec> {
    let mut out = Vec::new();
    for s in &expr.singles {
        out.push(TermSpec::Single {
            party: s.party,
            index: s.index,
        });
    }
    for p in &expr.pairs {
        out.push(match p.kind {
            PairKind::SameSystem => TermSpec::Pair {
                first: p.left.index,
                second: p.right.index,
            },
            PairKind::CrossParty => {
                let (a, b) = if p.left.party == Party::A {
                    (p.left.index, p.right.index)
                } else {
                    (p.right.index, p.left.index)
                };
                TermSpec::Cross { alice: a, bob: b }
            }
        });
    }
    out
}

/// Runs a descriptor end to end: one seeded run per term, per-term
/// estimates, and the combined expression estimate when every
/// expression term was measured.
pub fn run_experiment(
    desc: &ExperimentDescriptor,
    catalog: &RayCatalog,
    graph: &OrthogonalityGraph,
    jobs: usize,
) -> Result<ExperimentReport> {
    desc.noise.validate()?;
    if desc.shots == 0 {
        return Err(Error::InvalidDescriptor {
            reason: "shots must be at least 1".into(),
        });
    }

    let expr: Option<InequalityExpression> = match desc.experiment {
        ExperimentKind::Kappa => Some(kappa_expression(graph)?),
        ExperimentKind::Bell => Some(bell_expression(graph)?),
        ExperimentKind::SinglePair => None,
    };

    let terms = match (&desc.terms, &expr) {
        (Some(t), _) => t.clone(),
        (None, Some(e)) => default_terms(e),
        (None, None) => {
            return Err(Error::InvalidDescriptor {
                reason: "single_pair needs an explicit pair term".into(),
            })
        }
    };
    if terms.is_empty() {
        return Err(Error::InvalidDescriptor {
            reason: "no terms to measure".into(),
        });
    }

    let prep_spec = match desc.experiment {
        ExperimentKind::Bell => {
            if desc.prep.is_some() {
                return Err(Error::InvalidDescriptor {
                    reason: "the bell experiment prepares the two-photon source; drop `prep`"
                        .into(),
                });
            }
            None
        }
        _ => Some(desc.prep.clone().unwrap_or(StateSpec::MaximallyMixed)),
    };

    let mut term_reports = Vec::new();
    let mut tables: BTreeMap<String, CountTable> = BTreeMap::new();
    for (ordinal, term) in terms.iter().enumerate() {
        let (preparation, apparatus, stat) = match *term {
            TermSpec::Single { party, index } => match desc.experiment {
                ExperimentKind::Bell => {
                    let (alice_idx, bob_idx, stat) = match party {
                        Party::A => (index, 11, OutcomeStat::MarginalAlice),
                        Party::B => (11, index, OutcomeStat::MarginalBob),
                    };
                    (
                        Preparation::TwoPhotonSource,
                        Apparatus::TwoParty {
                            alice: build_device(catalog, alice_idx)?,
                            bob: build_device(catalog, bob_idx)?,
                        },
                        stat,
                    )
                }
                _ => {
                    if party == Party::B {
                        return Err(Error::InvalidDescriptor {
                            reason: "single-system experiments measure party A only".into(),
                        });
                    }
                    (
                        prep_spec
                            .as_ref()
                            .expect("single-system prep")
                            .preparation(catalog)?,
                        Apparatus::Single(build_device(catalog, index)?),
                        OutcomeStat::SingleOutcome,
                    )
                }
            },
            TermSpec::Pair { first, second } => {
                if desc.experiment == ExperimentKind::Bell {
                    return Err(Error::InvalidDescriptor {
                        reason: "the bell experiment has no sequential pairs".into(),
                    });
                }
                (
                    prep_spec
                        .as_ref()
                        .expect("single-system prep")
                        .preparation(catalog)?,
                    Apparatus::Cascade(cascade(
                        build_device(catalog, first)?,
                        build_device(catalog, second)?,
                    )),
                    OutcomeStat::Product,
                )
            }
            TermSpec::Cross { alice, bob } => {
                if desc.experiment != ExperimentKind::Bell {
                    return Err(Error::InvalidDescriptor {
                        reason: "cross terms belong to the bell experiment".into(),
                    });
                }
                (
                    Preparation::TwoPhotonSource,
                    Apparatus::TwoParty {
                        alice: build_device(catalog, alice)?,
                        bob: build_device(catalog, bob)?,
                    },
                    OutcomeStat::Product,
                )
            }
        };

        let run = ShotRun::new(
            preparation,
            apparatus,
            desc.noise,
            derive_term_seed(desc.seed, ordinal as u64),
        )?;
        let table = run.run_with_jobs(desc.shots, jobs)?;
        let (m, v) = estimate_counts(&table, stat)?;
        term_reports.push(TermReport {
            term: term.label(),
            estimate: m,
            stderr: v.sqrt(),
            shots_emitted: table.shots_emitted,
            shots_detected: table.shots_detected,
            counts: table.counts.clone(),
        });
        tables.insert(term.label(), table);
    }

    let (value, stderr, expression, claimed_bound) = match &expr {
        Some(e) => {
            let have_all = term_labels(e)
                .iter()
                .all(|(label, _)| tables.contains_key(label));
            if have_all {
                let est = estimate_expression(e, &tables)?;
                (
                    Some(est.value),
                    Some(est.stderr),
                    Some(e.name.clone()),
                    Some(e.claimed_bound),
                )
            } else {
                (None, None, Some(e.name.clone()), Some(e.claimed_bound))
            }
        }
        None => (None, None, None, None),
    };

    // For a lone sequential pair, attach the exact reference table.
    let (reference, compatible) = if desc.experiment == ExperimentKind::SinglePair {
        if let [TermSpec::Pair { first, second }] = terms[..] {
            let rho = prep_spec
                .as_ref()
                .expect("single-system prep")
                .density(catalog)?;
            let table = luders_joint(&rho, catalog, first, second)?;
            let _ = sequential_expectation(&table);
            (Some(table.to_json()), Some(table.compatible))
        } else {
            return Err(Error::InvalidDescriptor {
                reason: "single_pair needs exactly one pair term".into(),
            });
        }
    } else {
        (None, None)
    };

    Ok(ExperimentReport {
        experiment: desc.experiment.as_str().into(),
        expression,
        seed: desc.seed,
        shots_per_term: desc.shots,
        noise: desc.noise,
        terms: term_reports,
        value,
        stderr,
        claimed_bound,
        reference,
        compatible,
    })
}
