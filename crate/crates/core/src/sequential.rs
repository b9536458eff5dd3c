//! Lueders-rule statistics for two sequential dichotomic measurements on
//! one qutrit.
//!
//! Outcome -1 projects onto the ray, `P_{-1} = |v><v|`, and +1 onto its
//! complement. For orthogonal rays the observables commute, the joint
//! table is order-invariant, and (-1, -1) never occurs. Non-commuting
//! pairs still yield a well-defined table; it is flagged incompatible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::qmath::{check_density_matrix, CMat};
use crate::rays::RayCatalog;
use crate::{Result, DEFAULT_TOL};

/// The four outcome pairs in a fixed order: (-1,-1), (-1,+1), (+1,-1),
/// (+1,+1).
pub const OUTCOME_PAIRS: [(i8, i8); 4] = [(-1, -1), (-1, 1), (1, -1), (1, 1)];

/// Joint distribution of two sequential measurement outcomes.
#[derive(Clone, Debug)]
pub struct JointOutcomeTable {
    /// (first measured index, second measured index).
    pub order: (u32, u32),
    /// Probabilities matching [`OUTCOME_PAIRS`].
    pub probs: [f64; 4],
    /// Whether the pair commutes within the default tolerance.
    pub compatible: bool,
}

impl JointOutcomeTable {
    pub fn prob(&self, a: i8, b: i8) -> f64 {
        let k = OUTCOME_PAIRS
            .iter()
            .position(|&(x, y)| x == a && y == b)
            .expect("outcomes are +-1");
        self.probs[k]
    }

    /// Marginal of the first measurement.
    pub fn first_marginal(&self, a: i8) -> f64 {
        self.prob(a, -1) + self.prob(a, 1)
    }

    pub fn to_json(&self) -> JointTableJson {
        let mut probs = BTreeMap::new();
        for (k, (a, b)) in OUTCOME_PAIRS.iter().enumerate() {
            probs.insert(format!("{},{}", fmt_outcome(*a), fmt_outcome(*b)), self.probs[k]);
        }
        JointTableJson {
            order: [self.order.0, self.order.1],
            probs,
        }
    }
}

fn fmt_outcome(v: i8) -> &'static str {
    if v == 1 {
        "+1"
    } else {
        "-1"
    }
}

/// Serialized joint table: `{"order": [i, j], "probs": {"-1,-1": p, ...}}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointTableJson {
    pub order: [u32; 2],
    pub probs: BTreeMap<String, f64>,
}

/// Joint outcome distribution of measuring `A_i` then `A_j` with the
/// Lueders update: `P(a,b) = tr(Pi_b^j Pi_a^i rho Pi_a^i Pi_b^j)`.
pub fn luders_joint(
    rho: &CMat,
    catalog: &RayCatalog,
    i: u32,
    j: u32,
) -> Result<JointOutcomeTable> {
    check_density_matrix(rho, DEFAULT_TOL)?;
    let id = CMat::identity(3);
    let proj = |index: u32, outcome: i8| -> Result<CMat> {
        let p_minus = catalog.projector(index)?;
        Ok(if outcome == -1 {
            p_minus
        } else {
            id.sub(&p_minus)
        })
    };
    let compatible = catalog
        .observable(i)?
        .commutator_norm(&catalog.observable(j)?)
        <= DEFAULT_TOL;

    let mut probs = [0.0; 4];
    for (k, (a, b)) in OUTCOME_PAIRS.iter().enumerate() {
        let pa = proj(i, *a)?;
        let pb = proj(j, *b)?;
        let updated = pb.mul(&pa).mul(rho).mul(&pa).mul(&pb);
        probs[k] = updated.trace().re.max(0.0);
    }
    Ok(JointOutcomeTable {
        order: (i, j),
        probs,
        compatible,
    })
}

/// Mean product of the two outcomes, `sum_ab a*b*P(a,b)`.
pub fn sequential_expectation(table: &JointOutcomeTable) -> f64 {
    OUTCOME_PAIRS
        .iter()
        .zip(table.probs.iter())
        .map(|((a, b), p)| f64::from(a * b) * p)
        .sum()
}
