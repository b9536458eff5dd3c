//! Weighted correlation expressions and exhaustive bound certification.
//!
//! Weights are exact rationals; bound certification maximizes the
//! expression over all deterministic +-1 assignments using integer
//! arithmetic on weights scaled by their common denominator, so the
//! certified bounds carry no floating-point error. Quantum evaluation
//! converts weights to floats at the last moment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::qmath::{expectation, CMat};
use crate::rays::{OrthogonalityGraph, RayCatalog};
use crate::{Error, Result, DEFAULT_TOL};

pub type Rational = Ratio<i64>;

/// Exhaustive enumeration is refused above this many assignment slots
/// (2^30 evaluations).
pub const SLOT_GUARD: usize = 30;

/// Serde adapter rendering a [`Rational`] as `{"num": .., "den": ..}`.
pub mod rat_serde {
    use super::Rational;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct RatJson {
        num: i64,
        den: i64,
    }

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        RatJson {
            num: *r.numer(),
            den: *r.denom(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let raw = RatJson::deserialize(d)?;
        if raw.den == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Rational::new(raw.num, raw.den))
    }
}

/// Serde adapter for optional rationals.
pub mod opt_rat {
    use super::Rational;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct RatJson {
        num: i64,
        den: i64,
    }

    pub fn serialize<S: Serializer>(r: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => RatJson {
                num: *r.numer(),
                den: *r.denom(),
            }
            .serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rational>, D::Error> {
        let raw = Option::<RatJson>::deserialize(d)?;
        Ok(raw.map(|r| Rational::new(r.num, r.den)))
    }
}

/// Measurement party. Single-system expressions live entirely on `A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::A => write!(f, "A"),
            Party::B => write!(f, "B"),
        }
    }
}

/// One observable slot, addressed by party and 1-based catalog index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OperandRef {
    pub party: Party,
    pub index: u32,
}

impl OperandRef {
    pub fn a(index: u32) -> Self {
        OperandRef {
            party: Party::A,
            index,
        }
    }

    pub fn b(index: u32) -> Self {
        OperandRef {
            party: Party::B,
            index,
        }
    }
}

impl fmt::Display for OperandRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.party, self.index)
    }
}

/// Whether a pair term is measured sequentially on one system or as a
/// coincidence across parties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairKind {
    #[serde(rename = "same-system")]
    SameSystem,
    #[serde(rename = "cross-party")]
    CrossParty,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingleTerm {
    pub party: Party,
    pub index: u32,
    #[serde(with = "rat_serde")]
    pub w: Rational,
}

/// A correlation term `<XY>`. For `SameSystem` the left operand is
/// measured first.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairTerm {
    pub kind: PairKind,
    pub left: OperandRef,
    pub right: OperandRef,
    #[serde(with = "rat_serde")]
    pub w: Rational,
}

impl PairTerm {
    fn key(&self) -> (PairKind, OperandRef, OperandRef) {
        (self.kind, self.left, self.right)
    }
}

/// A weighted sum of single-observable and pair terms with a claimed
/// classical bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ExpressionJson", into = "ExpressionJson")]
pub struct InequalityExpression {
    pub name: String,
    pub claimed_bound: Rational,
    pub singles: Vec<SingleTerm>,
    pub pairs: Vec<PairTerm>,
}

#[derive(Serialize, Deserialize)]
struct ExpressionJson {
    name: String,
    #[serde(with = "rat_serde")]
    bound: Rational,
    singles: Vec<SingleTerm>,
    pairs: Vec<PairTerm>,
}

impl From<InequalityExpression> for ExpressionJson {
    fn from(e: InequalityExpression) -> Self {
        ExpressionJson {
            name: e.name,
            bound: e.claimed_bound,
            singles: e.singles,
            pairs: e.pairs,
        }
    }
}

impl TryFrom<ExpressionJson> for InequalityExpression {
    type Error = Error;

    fn try_from(j: ExpressionJson) -> Result<Self> {
        InequalityExpression::new(j.name, j.bound, j.singles, j.pairs)
    }
}

impl InequalityExpression {
    pub fn new(
        name: impl Into<String>,
        claimed_bound: Rational,
        singles: Vec<SingleTerm>,
        pairs: Vec<PairTerm>,
    ) -> Result<Self> {
        let mut seen_singles = BTreeSet::new();
        for s in &singles {
            if !seen_singles.insert((s.party, s.index)) {
                return Err(Error::InvalidExpression {
                    reason: format!("duplicate single term {}{}", s.party, s.index),
                });
            }
        }
        let mut seen_pairs = BTreeSet::new();
        for p in &pairs {
            match p.kind {
                PairKind::SameSystem if p.left.party != p.right.party => {
                    return Err(Error::InvalidExpression {
                        reason: format!(
                            "same-system pair ({}, {}) spans two parties",
                            p.left, p.right
                        ),
                    });
                }
                PairKind::CrossParty if p.left.party == p.right.party => {
                    return Err(Error::InvalidExpression {
                        reason: format!(
                            "cross-party pair ({}, {}) is on one party",
                            p.left, p.right
                        ),
                    });
                }
                _ => {}
            }
            if p.left == p.right {
                return Err(Error::InvalidExpression {
                    reason: format!("pair ({}, {}) repeats one operand", p.left, p.right),
                });
            }
            if !seen_pairs.insert(p.key()) {
                return Err(Error::InvalidExpression {
                    reason: format!("duplicate pair term ({}, {})", p.left, p.right),
                });
            }
        }
        Ok(InequalityExpression {
            name: name.into(),
            claimed_bound,
            singles,
            pairs,
        })
    }

    /// Distinct assignment slots, sorted by (party, index).
    pub fn slots(&self) -> Vec<OperandRef> {
        let mut set = BTreeSet::new();
        for s in &self.singles {
            set.insert(OperandRef {
                party: s.party,
                index: s.index,
            });
        }
        for p in &self.pairs {
            set.insert(p.left);
            set.insert(p.right);
        }
        set.into_iter().collect()
    }

    /// All operands on one party and all pairs same-system.
    pub fn is_single_system(&self) -> bool {
        let parties: BTreeSet<Party> = self.slots().iter().map(|o| o.party).collect();
        parties.len() <= 1 && self.pairs.iter().all(|p| p.kind == PairKind::SameSystem)
    }

    /// No same-system pairs.
    pub fn is_purely_bipartite(&self) -> bool {
        self.pairs.iter().all(|p| p.kind == PairKind::CrossParty)
    }

    /// Sum of absolute weights over all terms, exact.
    pub fn weight_total(&self) -> Rational {
        let mut total = Rational::zero();
        for s in &self.singles {
            total += s.w.abs();
        }
        for p in &self.pairs {
            total += p.w.abs();
        }
        total
    }

    pub fn term_count(&self) -> usize {
        self.singles.len() + self.pairs.len()
    }
}

/// Builds the 13-observable noncontextual expression: weight 1/2 on
/// `<A_1..A_4>`, -1/2 on edges between {1..4} and {5..10}, weight 1 on
/// `<A_5..A_13>`, -1 on edges within {5..13}; claimed bound 9.
pub fn kappa_expression(graph: &OrthogonalityGraph) -> Result<InequalityExpression> {
    check_builtin_graph_shape(graph)?;
    let half = Rational::new(1, 2);
    let one = Rational::new(1, 1);
    let mut singles = Vec::new();
    for i in 1..=4u32 {
        singles.push(SingleTerm {
            party: Party::A,
            index: i,
            w: half,
        });
    }
    for k in 5..=13u32 {
        singles.push(SingleTerm {
            party: Party::A,
            index: k,
            w: one,
        });
    }
    let mut pairs = Vec::new();
    for i in 1..=4u32 {
        for j in 5..=10u32 {
            if graph.is_edge(i, j) {
                pairs.push(PairTerm {
                    kind: PairKind::SameSystem,
                    left: OperandRef::a(i),
                    right: OperandRef::a(j),
                    w: -half,
                });
            }
        }
    }
    for m in 5..=12u32 {
        for n in (m + 1)..=13u32 {
            if graph.is_edge(m, n) {
                pairs.push(PairTerm {
                    kind: PairKind::SameSystem,
                    left: OperandRef::a(m),
                    right: OperandRef::a(n),
                    w: -one,
                });
            }
        }
    }
    InequalityExpression::new("kappa", Rational::new(9, 1), singles, pairs)
}

/// The earlier Yu-Oh weighting kept as a comparison fixture: unit weight
/// on all 13 singles, -1/2 on every edge, claimed bound 8.
pub fn yu_oh_expression(graph: &OrthogonalityGraph) -> Result<InequalityExpression> {
    check_builtin_graph_shape(graph)?;
    let singles = (1..=13u32)
        .map(|i| SingleTerm {
            party: Party::A,
            index: i,
            w: Rational::new(1, 1),
        })
        .collect();
    let pairs = graph
        .edges()
        .into_iter()
        .map(|(i, j)| PairTerm {
            kind: PairKind::SameSystem,
            left: OperandRef::a(i),
            right: OperandRef::a(j),
            w: Rational::new(-1, 2),
        })
        .collect();
    InequalityExpression::new("yu-oh", Rational::new(8, 1), singles, pairs)
}

fn check_builtin_graph_shape(graph: &OrthogonalityGraph) -> Result<()> {
    if graph.node_count() != 13 {
        return Err(Error::InvalidGraph {
            reason: format!("expected 13 nodes, got {}", graph.node_count()),
        });
    }
    let edges = graph.edges();
    let first_rest = edges
        .iter()
        .filter(|(i, j)| (1..=4).contains(i) && (5..=10).contains(j))
        .count();
    let within_rest = edges
        .iter()
        .filter(|(i, j)| (5..=13).contains(i) && (5..=13).contains(j))
        .count();
    if edges.len() != 24 || first_rest != 12 || within_rest != 12 {
        return Err(Error::InvalidGraph {
            reason: format!(
                "edge partition {}/{}/{} does not match the 13-ray graph (12/12/24)",
                first_rest,
                within_rest,
                edges.len()
            ),
        });
    }
    Ok(())
}

/// A deterministic +-1 outcome per slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub values: BTreeMap<OperandRef, i8>,
}

#[derive(Serialize, Deserialize)]
struct AssignmentEntry {
    party: Party,
    index: u32,
    value: i8,
}

impl Serialize for Assignment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<AssignmentEntry> = self
            .values
            .iter()
            .map(|(o, v)| AssignmentEntry {
                party: o.party,
                index: o.index,
                value: *v,
            })
            .collect();
        entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Assignment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<AssignmentEntry>::deserialize(d)?;
        let mut values = BTreeMap::new();
        for e in entries {
            if e.value != 1 && e.value != -1 {
                return Err(serde::de::Error::custom("assignment values must be +-1"));
            }
            values.insert(
                OperandRef {
                    party: e.party,
                    index: e.index,
                },
                e.value,
            );
        }
        Ok(Assignment { values })
    }
}

/// Result of an exhaustive bound search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certification {
    #[serde(with = "rat_serde")]
    pub bound: Rational,
    pub maximizer: Assignment,
    pub evaluations: u64,
    pub wall_time_ms: u128,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

struct Compiled {
    slots: Vec<OperandRef>,
    singles: Vec<(usize, i64)>,
    pairs: Vec<(usize, usize, i64)>,
    scale: i64,
}

fn compile(expr: &InequalityExpression) -> Result<Compiled> {
    let slots = expr.slots();
    if slots.len() > SLOT_GUARD {
        return Err(Error::EnumerationGuard {
            slots: slots.len(),
            guard: SLOT_GUARD,
        });
    }
    let mut scale = 1i64;
    for s in &expr.singles {
        scale = scale / gcd(scale, *s.w.denom()) * s.w.denom();
    }
    for p in &expr.pairs {
        scale = scale / gcd(scale, *p.w.denom()) * p.w.denom();
    }
    let slot_of = |o: &OperandRef| slots.binary_search(o).expect("operand is a slot");
    let singles = expr
        .singles
        .iter()
        .map(|s| {
            let o = OperandRef {
                party: s.party,
                index: s.index,
            };
            (slot_of(&o), s.w.numer() * (scale / s.w.denom()))
        })
        .collect();
    let pairs = expr
        .pairs
        .iter()
        .map(|p| {
            (
                slot_of(&p.left),
                slot_of(&p.right),
                p.w.numer() * (scale / p.w.denom()),
            )
        })
        .collect();
    Ok(Compiled {
        slots,
        singles,
        pairs,
        scale,
    })
}

impl Compiled {
    /// Slot `k` reads bit `n-1-k`, so ascending masks enumerate value
    /// tuples in lexicographic order with -1 before +1.
    #[inline]
    fn eval(&self, mask: u64) -> i64 {
        let n = self.slots.len();
        let mut total = 0i64;
        for &(k, w) in &self.singles {
            let bit = (mask >> (n - 1 - k)) & 1;
            total += if bit == 1 { w } else { -w };
        }
        for &(a, b, w) in &self.pairs {
            let xor = ((mask >> (n - 1 - a)) ^ (mask >> (n - 1 - b))) & 1;
            total += if xor == 1 { -w } else { w };
        }
        total
    }

    fn scan(&self, range: std::ops::Range<u64>) -> (i64, u64) {
        let mut best_val = i64::MIN;
        let mut best_mask = 0u64;
        for mask in range {
            let v = self.eval(mask);
            if v > best_val {
                best_val = v;
                best_mask = mask;
            }
        }
        (best_val, best_mask)
    }

    fn assignment_for(&self, mask: u64) -> Assignment {
        let n = self.slots.len();
        let values = self
            .slots
            .iter()
            .enumerate()
            .map(|(k, o)| (*o, if (mask >> (n - 1 - k)) & 1 == 1 { 1 } else { -1 }))
            .collect();
        Assignment { values }
    }
}

/// Maximizes the expression over all 2^n deterministic assignments.
///
/// Exact integer arithmetic on scaled weights; the returned maximizer is
/// the lexicographically smallest one (-1 before +1 in slot order).
pub fn classical_bound(expr: &InequalityExpression) -> Result<Certification> {
    classical_bound_with_jobs(expr, 1)
}

/// Partitioned variant: the assignment space is split into `jobs`
/// contiguous ranges scanned concurrently. The result is bit-identical to
/// the sequential scan.
pub fn classical_bound_with_jobs(
    expr: &InequalityExpression,
    jobs: usize,
) -> Result<Certification> {
    let compiled = compile(expr)?;
    let start = Instant::now();
    let n = compiled.slots.len();
    let total: u64 = 1u64 << n;
    let jobs = jobs.max(1).min(total as usize);

    let (best_val, best_mask) = if jobs == 1 || total < (1 << 12) {
        compiled.scan(0..total)
    } else {
        let chunk = total.div_ceil(jobs as u64);
        let mut results = Vec::new();
        std::thread::scope(|scope| {
            let compiled = &compiled;
            let handles: Vec<_> = (0..jobs as u64)
                .map(|c| {
                    let lo = c * chunk;
                    let hi = ((c + 1) * chunk).min(total);
                    scope.spawn(move || compiled.scan(lo..hi))
                })
                .collect();
            for h in handles {
                results.push(h.join().expect("enumeration worker panicked"));
            }
        });
        // Chunks arrive in ascending mask order; strict improvement keeps
        // the first maximizer.
        let mut best = (i64::MIN, 0u64);
        for r in results {
            if r.0 > best.0 {
                best = r;
            }
        }
        best
    };

    Ok(Certification {
        bound: Rational::new(best_val, compiled.scale),
        maximizer: compiled.assignment_for(best_mask),
        evaluations: total,
        wall_time_ms: start.elapsed().as_millis(),
    })
}

/// Independent verifier for [`classical_bound`]: recursive branch
/// enumeration with incremental partial sums instead of a bitmask loop.
/// Both must agree exactly on bound and maximizer.
pub fn classical_bound_recursive(expr: &InequalityExpression) -> Result<(Rational, Assignment)> {
    fn rgcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a.abs().max(1)
        } else {
            rgcd(b, a % b)
        }
    }

    let ordered: Vec<OperandRef> = {
        let mut set = BTreeSet::new();
        for s in &expr.singles {
            set.insert(OperandRef {
                party: s.party,
                index: s.index,
            });
        }
        for p in &expr.pairs {
            set.insert(p.left);
            set.insert(p.right);
        }
        set.into_iter().collect()
    };
    let id_of: BTreeMap<OperandRef, usize> = ordered
        .iter()
        .enumerate()
        .map(|(k, o)| (*o, k))
        .collect();
    let n = ordered.len();
    if n > SLOT_GUARD {
        return Err(Error::EnumerationGuard {
            slots: n,
            guard: SLOT_GUARD,
        });
    }

    let mut denom = 1i64;
    for s in &expr.singles {
        denom = denom / rgcd(denom, *s.w.denom()) * s.w.denom();
    }
    for p in &expr.pairs {
        denom = denom / rgcd(denom, *p.w.denom()) * p.w.denom();
    }

    let mut single_weight = vec![0i64; n];
    for s in &expr.singles {
        let k = id_of[&OperandRef {
            party: s.party,
            index: s.index,
        }];
        single_weight[k] += s.w.numer() * (denom / s.w.denom());
    }
    // pairs_closing[k] lists pairs whose later slot is k.
    let mut pairs_closing: Vec<Vec<(usize, i64)>> = vec![Vec::new(); n];
    for p in &expr.pairs {
        let a = id_of[&p.left];
        let b = id_of[&p.right];
        let w = p.w.numer() * (denom / p.w.denom());
        let (early, late) = if a < b { (a, b) } else { (b, a) };
        pairs_closing[late].push((early, w));
    }

    struct Dfs<'a> {
        n: usize,
        single_weight: &'a [i64],
        pairs_closing: &'a [Vec<(usize, i64)>],
        state: Vec<i64>,
        best: i64,
        best_state: Vec<i64>,
        found: bool,
    }

    impl Dfs<'_> {
        fn go(&mut self, k: usize, running: i64) {
            if k == self.n {
                if !self.found || running > self.best {
                    self.best = running;
                    self.best_state = self.state.clone();
                    self.found = true;
                }
                return;
            }
            for val in [-1i64, 1] {
                self.state[k] = val;
                let mut delta = self.single_weight[k] * val;
                for &(early, w) in &self.pairs_closing[k] {
                    delta += w * val * self.state[early];
                }
                self.go(k + 1, running + delta);
            }
        }
    }

    let mut dfs = Dfs {
        n,
        single_weight: &single_weight,
        pairs_closing: &pairs_closing,
        state: vec![0; n],
        best: 0,
        best_state: vec![0; n],
        found: false,
    };
    dfs.go(0, 0);

    let values = ordered
        .iter()
        .enumerate()
        .map(|(k, o)| (*o, dfs.best_state[k] as i8))
        .collect();
    Ok((Rational::new(dfs.best, denom), Assignment { values }))
}

/// Quantum prediction of a single-system expression on a qutrit state:
/// singles as `tr(A_i rho)`, compatible same-system pairs as
/// `tr(A_i A_j rho)`.
pub fn quantum_value(
    expr: &InequalityExpression,
    catalog: &RayCatalog,
    rho: &CMat,
) -> Result<f64> {
    if !expr.is_single_system() {
        return Err(Error::InvalidExpression {
            reason: "quantum_value needs a single-system expression".into(),
        });
    }
    let mut total = 0.0;
    for s in &expr.singles {
        let a = catalog.observable(s.index)?;
        total += ratio_f64(s.w) * expectation(&a, rho)?;
    }
    for p in &expr.pairs {
        let prod = compatible_product(catalog, p.left.index, p.right.index)?;
        total += ratio_f64(p.w) * expectation(&prod, rho)?;
    }
    Ok(total)
}

/// Product `A_i A_j` after verifying the pair commutes; the product of
/// commuting reflections is Hermitian.
pub(crate) fn compatible_product(catalog: &RayCatalog, i: u32, j: u32) -> Result<CMat> {
    let a = catalog.observable(i)?;
    let b = catalog.observable(j)?;
    let comm = a.commutator_norm(&b);
    if comm > DEFAULT_TOL {
        return Err(Error::IncompatiblePair {
            left: format!("A{}", i),
            right: format!("A{}", j),
            norm: comm,
        });
    }
    Ok(a.mul(&b))
}

/// The operator `sum w_s A_i + sum w_p A_i A_j`. When it is proportional
/// to the identity the expression value is state-independent.
pub fn state_independence_witness(
    expr: &InequalityExpression,
    catalog: &RayCatalog,
) -> Result<CMat> {
    if !expr.is_single_system() {
        return Err(Error::InvalidExpression {
            reason: "witness needs a single-system expression".into(),
        });
    }
    let mut acc = CMat::zeros(3);
    for s in &expr.singles {
        acc = acc.add(&catalog.observable(s.index)?.scaled_re(ratio_f64(s.w)));
    }
    for p in &expr.pairs {
        let prod = compatible_product(catalog, p.left.index, p.right.index)?;
        acc = acc.add(&prod.scaled_re(ratio_f64(p.w)));
    }
    Ok(acc)
}

/// Exact rational quantum value for a state-independent expression.
///
/// Requires the witness to be proportional to the identity within 1e-12;
/// the proportionality constant is recovered as an exact small rational.
pub fn quantum_value_rational(
    expr: &InequalityExpression,
    catalog: &RayCatalog,
) -> Result<Rational> {
    let w = state_independence_witness(expr, catalog)?;
    let c = w.trace().re / 3.0;
    let dev = w.max_abs_diff(&CMat::identity(3).scaled_re(c));
    if dev > 1e-12 {
        return Err(Error::InvalidExpression {
            reason: format!(
                "expression is not state-independent (witness deviates from c*1 by {dev:.3e})"
            ),
        });
    }
    rationalize(c, 10_000, DEFAULT_TOL)
}

/// Violation gap divided by the weight-scaled term count,
/// `(quantum - bound) / sum |w|`.
pub fn robustness(expr: &InequalityExpression, quantum: f64) -> Result<f64> {
    let bound = ratio_f64(expr.claimed_bound);
    if quantum <= bound {
        return Err(Error::NotViolating { quantum, bound });
    }
    Ok((quantum - bound) / ratio_f64(expr.weight_total()))
}

/// Exact rational robustness from an exact quantum value.
pub fn robustness_rational(expr: &InequalityExpression, quantum: Rational) -> Result<Rational> {
    if quantum <= expr.claimed_bound {
        return Err(Error::NotViolating {
            quantum: ratio_f64(quantum),
            bound: ratio_f64(expr.claimed_bound),
        });
    }
    Ok((quantum - expr.claimed_bound) / expr.weight_total())
}

pub fn ratio_f64(r: Rational) -> f64 {
    r.to_f64().expect("rational fits in f64")
}

/// Nearest rational with denominator at most `max_den` by continued
/// fractions; errors unless it matches `x` within `tol`.
pub fn rationalize(x: f64, max_den: i64, tol: f64) -> Result<Rational> {
    if !x.is_finite() {
        return Err(Error::NotRational { value: x, tol });
    }
    let (mut h0, mut h1) = (1i64, x.floor() as i64);
    let (mut k0, mut k1) = (0i64, 1i64);
    let mut frac = x - x.floor();
    for _ in 0..64 {
        let approx = h1 as f64 / k1 as f64;
        if (x - approx).abs() <= tol {
            return Ok(Rational::new(h1, k1));
        }
        if frac.abs() < 1e-15 {
            break;
        }
        let r = 1.0 / frac;
        let a = r.floor();
        if a < 1.0 {
            break;
        }
        let k2 = a as i64 * k1 + k0;
        if k2 > max_den {
            break;
        }
        let h2 = a as i64 * h1 + h0;
        (h0, h1) = (h1, h2);
        (k0, k1) = (k1, k2);
        frac = r - a;
    }
    let approx = h1 as f64 / k1 as f64;
    if (x - approx).abs() <= tol {
        Ok(Rational::new(h1, k1))
    } else {
        Err(Error::NotRational { value: x, tol })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{CVec3, C64};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn builtin() -> (RayCatalog, OrthogonalityGraph) {
        let cat = RayCatalog::builtin();
        let g = OrthogonalityGraph::build(&cat);
        (cat, g)
    }

    fn mixed() -> CMat {
        CMat::identity(3).scaled_re(1.0 / 3.0)
    }

    fn random_pure(rng: &mut ChaCha8Rng) -> CMat {
        let v = CVec3([
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
        ]);
        v.normalized().unwrap().outer()
    }

    #[test]
    fn kappa_term_structure() {
        let (_, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        assert_eq!(k.singles.len(), 13);
        assert_eq!(k.pairs.len(), 24);
        assert_eq!(k.claimed_bound, Rational::new(9, 1));
        let halves = k
            .singles
            .iter()
            .filter(|s| s.w == Rational::new(1, 2))
            .count();
        let ones = k
            .singles
            .iter()
            .filter(|s| s.w == Rational::new(1, 1))
            .count();
        assert_eq!((halves, ones), (4, 9));
        let phalves = k
            .pairs
            .iter()
            .filter(|p| p.w == Rational::new(-1, 2))
            .count();
        let pones = k
            .pairs
            .iter()
            .filter(|p| p.w == Rational::new(-1, 1))
            .count();
        assert_eq!((phalves, pones), (12, 12));
        // (1/2)(4 + 12) + (9 + 12) = 29.
        assert_eq!(k.weight_total(), Rational::new(29, 1));
        assert!(k.is_single_system());
    }

    #[test]
    fn kappa_classical_bound_is_nine() {
        let (_, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        let cert = classical_bound(&k).unwrap();
        assert_eq!(cert.bound, Rational::new(9, 1));
        assert_eq!(cert.evaluations, 8192);
    }

    #[test]
    fn trivial_bounds() {
        let single = InequalityExpression::new(
            "single",
            Rational::new(1, 1),
            vec![SingleTerm {
                party: Party::A,
                index: 1,
                w: Rational::new(1, 1),
            }],
            vec![],
        )
        .unwrap();
        let cert = classical_bound(&single).unwrap();
        assert_eq!(cert.bound, Rational::new(1, 1));
        assert_eq!(cert.maximizer.values[&OperandRef::a(1)], 1);

        let anti = InequalityExpression::new(
            "anti",
            Rational::new(1, 1),
            vec![],
            vec![PairTerm {
                kind: PairKind::SameSystem,
                left: OperandRef::a(1),
                right: OperandRef::a(2),
                w: Rational::new(-1, 1),
            }],
        )
        .unwrap();
        let cert = classical_bound(&anti).unwrap();
        assert_eq!(cert.bound, Rational::new(1, 1));
    }

    #[test]
    fn partitioned_scan_matches_sequential() {
        let (_, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        let seq = classical_bound(&k).unwrap();
        for jobs in [2, 3, 7, 16] {
            let par = classical_bound_with_jobs(&k, jobs).unwrap();
            assert_eq!(par.bound, seq.bound);
            assert_eq!(par.maximizer, seq.maximizer);
            assert_eq!(par.evaluations, seq.evaluations);
        }
    }

    #[test]
    fn recursive_enumerator_agrees_on_kappa() {
        let (_, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        let cert = classical_bound(&k).unwrap();
        let (bound, maximizer) = classical_bound_recursive(&k).unwrap();
        assert_eq!(bound, cert.bound);
        assert_eq!(maximizer, cert.maximizer);
    }

    #[test]
    fn enumeration_guard_rejects_wide_expressions() {
        let singles = (1..=31u32)
            .map(|i| SingleTerm {
                party: Party::A,
                index: i,
                w: Rational::new(1, 1),
            })
            .collect();
        let e = InequalityExpression::new("wide", Rational::new(31, 1), singles, vec![]).unwrap();
        assert!(matches!(
            classical_bound(&e),
            Err(Error::EnumerationGuard { slots: 31, .. })
        ));
    }

    #[test]
    fn kappa_quantum_value_is_state_independent() {
        let (cat, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        let want = 29.0 / 3.0;
        assert!((quantum_value(&k, &cat, &mixed()).unwrap() - want).abs() <= 1e-12);
        let v4 = cat.ray(4).unwrap().outer();
        assert!((quantum_value(&k, &cat, &v4).unwrap() - want).abs() <= 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let rho = random_pure(&mut rng);
            assert!((quantum_value(&k, &cat, &rho).unwrap() - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn witness_of_kappa_is_proportional_to_identity() {
        let (cat, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        let w = state_independence_witness(&k, &cat).unwrap();
        let target = CMat::identity(3).scaled_re(29.0 / 3.0);
        assert!(w.max_abs_diff(&target) <= 1e-12);
        // Witness trace / 3 equals the maximally mixed value.
        let qv = quantum_value(&k, &cat, &mixed()).unwrap();
        assert!((w.trace().re / 3.0 - qv).abs() <= 1e-12);
    }

    #[test]
    fn witness_of_lone_single_is_not_identity() {
        let (cat, _) = builtin();
        let e = InequalityExpression::new(
            "a11",
            Rational::new(1, 1),
            vec![SingleTerm {
                party: Party::A,
                index: 11,
                w: Rational::new(1, 1),
            }],
            vec![],
        )
        .unwrap();
        let w = state_independence_witness(&e, &cat).unwrap();
        let want = CMat::from_real_rows([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(w.max_abs_diff(&want) <= 1e-12);
        assert!(quantum_value_rational(&e, &cat).is_err());
    }

    #[test]
    fn kappa_robustness_is_exact() {
        let (cat, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        let q = quantum_value_rational(&k, &cat).unwrap();
        assert_eq!(q, Rational::new(29, 3));
        assert_eq!(robustness_rational(&k, q).unwrap(), Rational::new(2, 87));
        let f = robustness(&k, 29.0 / 3.0).unwrap();
        assert!((f - 2.0 / 87.0).abs() <= 1e-12);
    }

    #[test]
    fn yu_oh_fixture() {
        let (cat, g) = builtin();
        let yo = yu_oh_expression(&g).unwrap();
        let cert = classical_bound(&yo).unwrap();
        assert_eq!(cert.bound, Rational::new(8, 1));
        let q = quantum_value_rational(&yo, &cat).unwrap();
        assert_eq!(q, Rational::new(25, 3));
        assert_eq!(robustness_rational(&yo, q).unwrap(), Rational::new(1, 75));
    }

    #[test]
    fn robustness_requires_violation() {
        let (_, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        assert!(robustness(&k, 9.0).is_err());
        assert!(robustness_rational(&k, Rational::new(9, 1)).is_err());
    }

    #[test]
    fn robustness_of_toy_gap() {
        let e = InequalityExpression::new(
            "toy",
            Rational::new(1, 1),
            vec![
                SingleTerm {
                    party: Party::A,
                    index: 1,
                    w: Rational::new(1, 1),
                },
                SingleTerm {
                    party: Party::A,
                    index: 2,
                    w: Rational::new(1, 1),
                },
            ],
            vec![],
        )
        .unwrap();
        assert!((robustness(&e, 2.0).unwrap() - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn quantum_value_rejects_incompatible_pairs() {
        let (cat, _) = builtin();
        // Rays 1 and 2 are not orthogonal.
        let e = InequalityExpression::new(
            "bad",
            Rational::new(1, 1),
            vec![],
            vec![PairTerm {
                kind: PairKind::SameSystem,
                left: OperandRef::a(1),
                right: OperandRef::a(2),
                w: Rational::new(1, 1),
            }],
        )
        .unwrap();
        assert!(matches!(
            quantum_value(&e, &cat, &mixed()),
            Err(Error::IncompatiblePair { .. })
        ));
    }

    #[test]
    fn quantum_value_is_affine_in_rho() {
        let (cat, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let r1 = random_pure(&mut rng);
            let r2 = random_pure(&mut rng);
            let alpha = rng.random::<f64>();
            let blend = r1.scaled_re(alpha).add(&r2.scaled_re(1.0 - alpha));
            let lhs = quantum_value(&k, &cat, &blend).unwrap();
            let rhs = alpha * quantum_value(&k, &cat, &r1).unwrap()
                + (1.0 - alpha) * quantum_value(&k, &cat, &r2).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10);
        }
    }

    #[test]
    fn component_permutations_preserve_kappa() {
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let base = RayCatalog::builtin();
        for perm in perms {
            let rays = base
                .iter()
                .map(|(_, r)| CVec3([r.0[perm[0]], r.0[perm[1]], r.0[perm[2]]]))
                .collect();
            let cat = RayCatalog::from_rays(rays).unwrap();
            let g = OrthogonalityGraph::build(&cat);
            let k = kappa_expression(&g).unwrap();
            let cert = classical_bound(&k).unwrap();
            assert_eq!(cert.bound, Rational::new(9, 1));
            let q = quantum_value(&k, &cat, &mixed()).unwrap();
            assert!((q - 29.0 / 3.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn expression_json_round_trip() {
        let (_, g) = builtin();
        let k = kappa_expression(&g).unwrap();
        let json = serde_json::to_string(&k).unwrap();
        assert!(json.contains("\"bound\":{\"num\":9,\"den\":1}"));
        assert!(json.contains("\"kind\":\"same-system\""));
        let back: InequalityExpression = serde_json::from_str(&json).unwrap();
        assert_eq!(back.singles.len(), 13);
        assert_eq!(back.pairs.len(), 24);
        assert_eq!(back.claimed_bound, k.claimed_bound);
        assert_eq!(classical_bound(&back).unwrap().bound, Rational::new(9, 1));
    }

    #[test]
    fn expression_validation_rejects_duplicates() {
        let dup = InequalityExpression::new(
            "dup",
            Rational::new(1, 1),
            vec![],
            vec![
                PairTerm {
                    kind: PairKind::SameSystem,
                    left: OperandRef::a(1),
                    right: OperandRef::a(6),
                    w: Rational::new(1, 1),
                },
                PairTerm {
                    kind: PairKind::SameSystem,
                    left: OperandRef::a(1),
                    right: OperandRef::a(6),
                    w: Rational::new(1, 2),
                },
            ],
        );
        assert!(dup.is_err());
        let mixed_kind = InequalityExpression::new(
            "bad-kind",
            Rational::new(1, 1),
            vec![],
            vec![PairTerm {
                kind: PairKind::CrossParty,
                left: OperandRef::a(1),
                right: OperandRef::a(6),
                w: Rational::new(1, 1),
            }],
        );
        assert!(mixed_kind.is_err());
    }

    #[test]
    fn rationalize_recovers_small_fractions() {
        assert_eq!(
            rationalize(29.0 / 3.0, 100, 1e-9).unwrap(),
            Rational::new(29, 3)
        );
        assert_eq!(rationalize(0.95, 100, 1e-9).unwrap(), Rational::new(19, 20));
        assert_eq!(
            rationalize(-1.0 / 3.0, 100, 1e-9).unwrap(),
            Rational::new(-1, 3)
        );
        assert_eq!(rationalize(5.0, 100, 1e-9).unwrap(), Rational::new(5, 1));
        assert!(rationalize(std::f64::consts::PI, 10, 1e-9).is_err());
    }

    #[test]
    fn random_small_expressions_dual_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n_slots = rng.random_range(2..=10usize);
            let bipartite = rng.random::<bool>();
            let slot = |k: usize| -> OperandRef {
                if bipartite && k % 2 == 1 {
                    OperandRef::b(k as u32 + 1)
                } else {
                    OperandRef::a(k as u32 + 1)
                }
            };
            let weights = [
                Rational::new(1, 1),
                Rational::new(-1, 1),
                Rational::new(1, 2),
                Rational::new(-1, 2),
                Rational::new(3, 2),
                Rational::new(-2, 3),
            ];
            let mut singles = Vec::new();
            for k in 0..n_slots {
                if rng.random::<bool>() {
                    let o = slot(k);
                    singles.push(SingleTerm {
                        party: o.party,
                        index: o.index,
                        w: weights[rng.random_range(0..weights.len())],
                    });
                }
            }
            let mut pairs = Vec::new();
            let mut seen = BTreeSet::new();
            for _ in 0..n_slots {
                let a = rng.random_range(0..n_slots);
                let b = rng.random_range(0..n_slots);
                if a == b {
                    continue;
                }
                let (l, r) = (slot(a), slot(b));
                let kind = if l.party == r.party {
                    PairKind::SameSystem
                } else {
                    PairKind::CrossParty
                };
                if !seen.insert((kind, l, r)) {
                    continue;
                }
                pairs.push(PairTerm {
                    kind,
                    left: l,
                    right: r,
                    w: weights[rng.random_range(0..weights.len())],
                });
            }
            let e =
                InequalityExpression::new("rand", Rational::new(0, 1), singles, pairs).unwrap();
            if e.slots().is_empty() {
                continue;
            }
            let cert = classical_bound(&e).unwrap();
            let (rb, rm) = classical_bound_recursive(&e).unwrap();
            assert_eq!(cert.bound, rb);
            assert_eq!(cert.maximizer, rm);
        }
    }
}
