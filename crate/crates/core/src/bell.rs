//! Conversion of the single-qutrit noncontextual expression into a
//! two-qutrit Bell expression, with certified local bounds.
//!
//! Step one distributes the observables between Alice and Bob. Step two
//! replaces every remaining same-system pair `<X_i X_j>` by
//! `w/2 (<A_i B_j> + <A_j B_i> - <A_i B_i> - <A_j B_j>)`, merges like
//! terms, and recertifies the bound by exhaustive enumeration over local
//! deterministic assignments.
//!
//! Bob's observable `B_j` is the same matrix as `A_j`. That identification
//! gives `<A_i (x) B_i> = 1` on the maximally entangled state only because
//! every built-in ray is real; conversions on catalogs with complex rays
//! are rejected.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::inequality::{
    classical_bound_with_jobs, compatible_product, kappa_expression, rat_serde, ratio_f64,
    rationalize, Certification, InequalityExpression, OperandRef, PairKind, PairTerm, Party,
    Rational, SingleTerm,
};
use crate::qmath::{check_density_matrix, expectation, tensor, CMat, C64};
use crate::rays::{OrthogonalityGraph, RayCatalog};
use crate::{Error, Result, DEFAULT_TOL};

/// Which catalog indices each party measures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartySplit {
    pub alice: BTreeSet<u32>,
    pub bob: BTreeSet<u32>,
}

impl PartySplit {
    /// Alice takes {1..4, 11..13}, Bob takes {5..10}.
    pub fn paper_split() -> Self {
        PartySplit {
            alice: [1, 2, 3, 4, 11, 12, 13].into_iter().collect(),
            bob: (5..=10).collect(),
        }
    }

    fn party_of(&self, index: u32) -> Option<Party> {
        if self.alice.contains(&index) {
            Some(Party::A)
        } else if self.bob.contains(&index) {
            Some(Party::B)
        } else {
            None
        }
    }
}

/// A validated two-qutrit density matrix.
#[derive(Clone, Debug)]
pub struct BipartiteState {
    rho: CMat,
}

impl BipartiteState {
    pub fn new(rho: CMat) -> Result<Self> {
        if rho.dim() != 9 {
            return Err(Error::DimensionMismatch {
                expected: 9,
                got: rho.dim(),
            });
        }
        check_density_matrix(&rho, DEFAULT_TOL)?;
        Ok(BipartiteState { rho })
    }

    pub fn rho(&self) -> &CMat {
        &self.rho
    }

    /// Reduced state of Alice's qutrit.
    pub fn reduced_alice(&self) -> CMat {
        CMat::from_fn(3, |i, ip| {
            (0..3).map(|k| self.rho.at(3 * i + k, 3 * ip + k)).sum()
        })
    }

    /// Reduced state of Bob's qutrit.
    pub fn reduced_bob(&self) -> CMat {
        CMat::from_fn(3, |k, kp| {
            (0..3).map(|i| self.rho.at(3 * i + k, 3 * i + kp)).sum()
        })
    }
}

/// Projector onto `(|00> + |11> + |22>)/sqrt(3)`.
pub fn entangled_state() -> BipartiteState {
    let amp = C64::new(1.0 / 3.0_f64.sqrt(), 0.0);
    let mut psi = [C64::ZERO; 9];
    for k in 0..3 {
        psi[3 * k + k] = amp;
    }
    let rho = CMat::from_fn(9, |i, j| psi[i] * psi[j].conj());
    BipartiteState { rho }
}

/// `v |psi><psi| + (1 - v)/9 * identity`.
pub fn noisy_state(v: f64) -> Result<BipartiteState> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::VisibilityOutOfRange(v));
    }
    let rho = entangled_state()
        .rho
        .scaled_re(v)
        .add(&CMat::identity(9).scaled_re((1.0 - v) / 9.0));
    Ok(BipartiteState { rho })
}

/// Step one: distribute a single-system expression over two parties.
///
/// Pairs whose operands land on different parties become cross-party
/// terms with Alice's operand on the left; pairs staying on one party
/// remain same-system. The claimed bound is unchanged, since the terms
/// are only relabeled.
pub fn split_expression(
    expr: &InequalityExpression,
    split: &PartySplit,
) -> Result<InequalityExpression> {
    if !expr.is_single_system() {
        return Err(Error::InvalidExpression {
            reason: "split_expression needs a single-system expression".into(),
        });
    }
    if let Some(shared) = split.alice.intersection(&split.bob).next() {
        return Err(Error::InvalidSplit {
            reason: format!("index {shared} appears on both parties"),
        });
    }
    let place = |index: u32| -> Result<Party> {
        split.party_of(index).ok_or(Error::InvalidSplit {
            reason: format!("index {index} is on neither party"),
        })
    };

    let singles = expr
        .singles
        .iter()
        .map(|s| {
            Ok(SingleTerm {
                party: place(s.index)?,
                index: s.index,
                w: s.w,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pairs = Vec::new();
    for p in &expr.pairs {
        let (i, j) = (p.left.index, p.right.index);
        let (pi, pj) = (place(i)?, place(j)?);
        let term = if pi == pj {
            PairTerm {
                kind: PairKind::SameSystem,
                left: OperandRef {
                    party: pi,
                    index: i,
                },
                right: OperandRef {
                    party: pj,
                    index: j,
                },
                w: p.w,
            }
        } else {
            let (alice_idx, bob_idx) = if pi == Party::A { (i, j) } else { (j, i) };
            PairTerm {
                kind: PairKind::CrossParty,
                left: OperandRef::a(alice_idx),
                right: OperandRef::b(bob_idx),
                w: p.w,
            }
        };
        pairs.push(term);
    }

    InequalityExpression::new(
        format!("{}-split", expr.name),
        expr.claimed_bound,
        singles,
        pairs,
    )
}

/// Step two: replace every same-system pair by its four cross-party
/// terms, merge like terms, drop zeros, and recertify the bound over
/// local deterministic assignments.
pub fn symmetrize(
    expr: &InequalityExpression,
    graph: &OrthogonalityGraph,
) -> Result<InequalityExpression> {
    let mut singles: BTreeMap<OperandRef, Rational> = BTreeMap::new();
    for s in &expr.singles {
        *singles
            .entry(OperandRef {
                party: s.party,
                index: s.index,
            })
            .or_insert_with(Rational::zero) += s.w;
    }

    // Cross terms keyed by (alice index, bob index).
    let mut cross: BTreeMap<(u32, u32), Rational> = BTreeMap::new();
    let mut add_cross = |a: u32, b: u32, w: Rational| {
        *cross.entry((a, b)).or_insert_with(Rational::zero) += w;
    };

    for p in &expr.pairs {
        match p.kind {
            PairKind::CrossParty => {
                let (a, b) = if p.left.party == Party::A {
                    (p.left.index, p.right.index)
                } else {
                    (p.right.index, p.left.index)
                };
                add_cross(a, b, p.w);
            }
            PairKind::SameSystem => {
                let (i, j) = (p.left.index, p.right.index);
                if !graph.is_edge(i, j) {
                    return Err(Error::IncompatiblePair {
                        left: format!("{}", p.left),
                        right: format!("{}", p.right),
                        norm: f64::NAN,
                    });
                }
                let half = p.w / Rational::new(2, 1);
                add_cross(i, j, half);
                add_cross(j, i, half);
                add_cross(i, i, -half);
                add_cross(j, j, -half);
            }
        }
    }

    let singles = singles
        .into_iter()
        .filter(|(_, w)| !w.is_zero())
        .map(|(o, w)| SingleTerm {
            party: o.party,
            index: o.index,
            w,
        })
        .collect();
    let pairs = cross
        .into_iter()
        .filter(|(_, w)| !w.is_zero())
        .map(|((a, b), w)| PairTerm {
            kind: PairKind::CrossParty,
            left: OperandRef::a(a),
            right: OperandRef::b(b),
            w,
        })
        .collect();

    let mut out = InequalityExpression::new(
        format!("{}-bell", expr.name),
        expr.claimed_bound,
        singles,
        pairs,
    )?;
    let cert = lhv_bound(&out)?;
    out.claimed_bound = cert.bound;
    Ok(out)
}

/// Exhaustive maximum over deterministic local assignments, one value per
/// Alice setting and per Bob setting.
pub fn lhv_bound(expr: &InequalityExpression) -> Result<Certification> {
    lhv_bound_with_jobs(expr, 1)
}

pub fn lhv_bound_with_jobs(expr: &InequalityExpression, jobs: usize) -> Result<Certification> {
    if !expr.is_purely_bipartite() {
        return Err(Error::InvalidExpression {
            reason: "lhv_bound needs a purely bipartite expression (no same-system pairs)".into(),
        });
    }
    classical_bound_with_jobs(expr, jobs)
}

/// The built-in step-one expression (paper split of kappa), bound 9.
pub fn kappa_prime_expression(graph: &OrthogonalityGraph) -> Result<InequalityExpression> {
    let kappa = kappa_expression(graph)?;
    let mut out = split_expression(&kappa, &PartySplit::paper_split())?;
    out.name = "kappa-prime".into();
    Ok(out)
}

/// The built-in Bell expression (symmetrized step one), bound 15.
pub fn bell_expression(graph: &OrthogonalityGraph) -> Result<InequalityExpression> {
    let prime = kappa_prime_expression(graph)?;
    let mut out = symmetrize(&prime, graph)?;
    out.name = "bell".into();
    Ok(out)
}

fn require_real_for_bob(expr: &InequalityExpression, catalog: &RayCatalog) -> Result<()> {
    let uses_bob = expr.singles.iter().any(|s| s.party == Party::B)
        || expr
            .pairs
            .iter()
            .any(|p| p.left.party == Party::B || p.right.party == Party::B);
    if uses_bob && !catalog.is_real(1e-12) {
        return Err(Error::NonRealCatalog);
    }
    Ok(())
}

/// Quantum value of a bipartite expression: singles as
/// `tr((A_i (x) 1) rho)` or `tr((1 (x) B_j) rho)`, cross pairs as
/// `tr((A_i (x) B_j) rho)`. Same-system pairs are evaluated as the
/// operator product on their own party, which matches the sequential
/// value for compatible pairs.
pub fn quantum_value_bipartite(
    expr: &InequalityExpression,
    catalog: &RayCatalog,
    state: &BipartiteState,
) -> Result<f64> {
    require_real_for_bob(expr, catalog)?;
    let id = CMat::identity(3);
    let mut total = 0.0;
    for s in &expr.singles {
        let a = catalog.observable(s.index)?;
        let op = match s.party {
            Party::A => tensor(&a, &id)?,
            Party::B => tensor(&id, &a)?,
        };
        total += ratio_f64(s.w) * expectation(&op, &state.rho)?;
    }
    for p in &expr.pairs {
        let op = match p.kind {
            PairKind::CrossParty => {
                let (a_idx, b_idx) = if p.left.party == Party::A {
                    (p.left.index, p.right.index)
                } else {
                    (p.right.index, p.left.index)
                };
                tensor(&catalog.observable(a_idx)?, &catalog.observable(b_idx)?)?
            }
            PairKind::SameSystem => {
                let prod = compatible_product(catalog, p.left.index, p.right.index)?;
                match p.left.party {
                    Party::A => tensor(&prod, &id)?,
                    Party::B => tensor(&id, &prod)?,
                }
            }
        };
        total += ratio_f64(p.w) * expectation(&op, &state.rho)?;
    }
    Ok(total)
}

/// Exact rational values of a bipartite expression on the maximally
/// entangled state and on `1/9`, recovered from the float evaluation.
pub fn quantum_endpoints_rational(
    expr: &InequalityExpression,
    catalog: &RayCatalog,
) -> Result<(Rational, Rational)> {
    let ent = quantum_value_bipartite(expr, catalog, &entangled_state())?;
    let mixed = quantum_value_bipartite(expr, catalog, &noisy_state(0.0)?)?;
    Ok((
        rationalize(ent, 100_000, DEFAULT_TOL)?,
        rationalize(mixed, 100_000, DEFAULT_TOL)?,
    ))
}

/// Solves `v*q_ent + (1-v)*q_mixed = bound` for the visibility at which
/// the noisy state stops violating.
pub fn threshold_from_endpoints(
    bound: Rational,
    q_ent: Rational,
    q_mixed: Rational,
) -> Result<Rational> {
    if q_ent <= bound {
        return Err(Error::NotViolating {
            quantum: ratio_f64(q_ent),
            bound: ratio_f64(bound),
        });
    }
    Ok((bound - q_mixed) / (q_ent - q_mixed))
}

/// Visibility threshold of a purely bipartite expression whose claimed
/// bound is the certified LHV bound.
pub fn visibility_threshold(
    expr: &InequalityExpression,
    catalog: &RayCatalog,
) -> Result<Rational> {
    if !expr.is_purely_bipartite() {
        return Err(Error::InvalidExpression {
            reason: "visibility threshold needs a purely bipartite expression".into(),
        });
    }
    let (q_ent, q_mixed) = quantum_endpoints_rational(expr, catalog)?;
    threshold_from_endpoints(expr.claimed_bound, q_ent, q_mixed)
}

/// Full two-step conversion record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConversionReport {
    pub input_expr: InequalityExpression,
    pub split: PartySplit,
    pub step1_expr: InequalityExpression,
    #[serde(with = "rat_serde")]
    pub step1_bound: Rational,
    pub step2_expr: InequalityExpression,
    #[serde(with = "rat_serde")]
    pub lhv_bound: Rational,
    pub lhv_evaluations: u64,
    pub quantum_value: f64,
    pub visibility_threshold: f64,
    #[serde(with = "rat_serde")]
    pub visibility_threshold_rational: Rational,
}

/// Runs kappa -> split -> symmetrize, recertifying both bounds.
pub fn convert_pipeline(
    catalog: &RayCatalog,
    graph: &OrthogonalityGraph,
    jobs: usize,
) -> Result<ConversionReport> {
    let kappa = kappa_expression(graph)?;
    let split = PartySplit::paper_split();
    let mut step1 = split_expression(&kappa, &split)?;
    step1.name = "kappa-prime".into();
    let step1_cert = classical_bound_with_jobs(&step1, jobs)?;
    let mut step2 = symmetrize(&step1, graph)?;
    step2.name = "bell".into();
    let lhv = lhv_bound_with_jobs(&step2, jobs)?;
    let quantum = quantum_value_bipartite(&step2, catalog, &entangled_state())?;
    let threshold = visibility_threshold(&step2, catalog)?;
    Ok(ConversionReport {
        input_expr: kappa,
        split,
        step1_expr: step1,
        step1_bound: step1_cert.bound,
        step2_expr: step2,
        lhv_bound: lhv.bound,
        lhv_evaluations: lhv.evaluations,
        quantum_value: quantum,
        visibility_threshold: ratio_f64(threshold),
        visibility_threshold_rational: threshold,
    })
}

/// Measured settings of one party, sorted.
pub fn party_settings(expr: &InequalityExpression, party: Party) -> Vec<u32> {
    expr.slots()
        .into_iter()
        .filter(|o| o.party == party)
        .map(|o| o.index)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inequality::{classical_bound, classical_bound_recursive, quantum_value};

    fn builtin() -> (RayCatalog, OrthogonalityGraph) {
        let cat = RayCatalog::builtin();
        let g = OrthogonalityGraph::build(&cat);
        (cat, g)
    }

    #[test]
    fn entangled_state_shape() {
        let psi = entangled_state();
        assert!((psi.rho().trace().re - 1.0).abs() <= 1e-12);
        let third = CMat::identity(3).scaled_re(1.0 / 3.0);
        assert!(psi.reduced_alice().max_abs_diff(&third) <= 1e-12);
        assert!(psi.reduced_bob().max_abs_diff(&third) <= 1e-12);
    }

    #[test]
    fn perfect_correlations_on_every_ray() {
        let (cat, _) = builtin();
        let psi = entangled_state();
        for i in 1..=13 {
            let a = cat.observable(i).unwrap();
            let op = tensor(&a, &a).unwrap();
            let val = expectation(&op, psi.rho()).unwrap();
            assert!((val - 1.0).abs() <= 1e-12, "A{i} (x) A{i}");
        }
    }

    #[test]
    fn noisy_state_limits() {
        let v1 = noisy_state(1.0).unwrap();
        assert!(v1.rho().max_abs_diff(entangled_state().rho()) <= 1e-12);
        let v0 = noisy_state(0.0).unwrap();
        assert!(
            v0.rho()
                .max_abs_diff(&CMat::identity(9).scaled_re(1.0 / 9.0))
                <= 1e-12
        );
        let half = noisy_state(0.5).unwrap();
        assert!((half.rho().trace().re - 1.0).abs() <= 1e-12);
        assert!(half.rho().is_psd(1e-9));
        assert!(noisy_state(-0.1).is_err());
        assert!(noisy_state(1.1).is_err());
    }

    #[test]
    fn split_reproduces_step_one() {
        let (_, g) = builtin();
        let prime = kappa_prime_expression(&g).unwrap();
        assert_eq!(prime.claimed_bound, Rational::new(9, 1));

        let cross: Vec<&PairTerm> = prime
            .pairs
            .iter()
            .filter(|p| p.kind == PairKind::CrossParty)
            .collect();
        let same: Vec<&PairTerm> = prime
            .pairs
            .iter()
            .filter(|p| p.kind == PairKind::SameSystem)
            .collect();
        assert_eq!(cross.len(), 18);
        assert_eq!(same.len(), 6);

        // The six sequential leftovers printed in step one.
        let mut got: Vec<(Party, u32, u32)> = same
            .iter()
            .map(|p| (p.left.party, p.left.index, p.right.index))
            .collect();
        got.sort();
        let want = vec![
            (Party::A, 11, 12),
            (Party::A, 11, 13),
            (Party::A, 12, 13),
            (Party::B, 5, 6),
            (Party::B, 7, 8),
            (Party::B, 9, 10),
        ];
        assert_eq!(got, want);
        for p in same {
            assert_eq!(p.w, Rational::new(-1, 1));
        }

        let cert = classical_bound(&prime).unwrap();
        assert_eq!(cert.bound, Rational::new(9, 1));
    }

    #[test]
    fn split_requires_coverage() {
        let (_, g) = builtin();
        let kappa = kappa_expression(&g).unwrap();
        let partial = PartySplit {
            alice: [1, 2, 3, 4].into_iter().collect(),
            bob: (5..=10).collect(),
        };
        assert!(matches!(
            split_expression(&kappa, &partial),
            Err(Error::InvalidSplit { .. })
        ));
    }

    #[test]
    fn split_of_pairless_expression_is_party_relabel() {
        let e = InequalityExpression::new(
            "solo",
            Rational::new(1, 1),
            vec![SingleTerm {
                party: Party::A,
                index: 5,
                w: Rational::new(1, 1),
            }],
            vec![],
        )
        .unwrap();
        let s = split_expression(&e, &PartySplit::paper_split()).unwrap();
        assert_eq!(s.singles.len(), 1);
        assert_eq!(s.singles[0].party, Party::B);
        assert!(s.pairs.is_empty());
    }

    #[test]
    fn symmetrize_reproduces_step_two() {
        let (_, g) = builtin();
        let bell = bell_expression(&g).unwrap();
        assert_eq!(bell.claimed_bound, Rational::new(15, 1));
        assert!(bell.is_purely_bipartite());
        assert_eq!(bell.singles.len(), 13);
        assert_eq!(bell.pairs.len(), 39);

        // Frozen term multiset of the converted expression.
        let mut want: BTreeMap<(u32, u32), Rational> = BTreeMap::new();
        let edges = g.edges();
        for i in 1..=4u32 {
            for j in 5..=10u32 {
                if g.is_edge(i, j) {
                    want.insert((i, j), Rational::new(-1, 2));
                }
            }
        }
        for k in 11..=13u32 {
            for j in 5..=10u32 {
                if g.is_edge(k, j) {
                    want.insert((k, j), Rational::new(-1, 1));
                }
            }
        }
        for (m, n) in &edges {
            if (5..=10).contains(m) && (5..=10).contains(n) {
                want.insert((*m, *n), Rational::new(-1, 2));
                want.insert((*n, *m), Rational::new(-1, 2));
            }
        }
        for k in 11..=13u32 {
            for n in 11..=13u32 {
                if k != n {
                    want.insert((k, n), Rational::new(-1, 2));
                }
            }
        }
        for j in 5..=10u32 {
            want.insert((j, j), Rational::new(1, 2));
        }
        for k in 11..=13u32 {
            want.insert((k, k), Rational::new(1, 1));
        }

        let got: BTreeMap<(u32, u32), Rational> = bell
            .pairs
            .iter()
            .map(|p| ((p.left.index, p.right.index), p.w))
            .collect();
        assert_eq!(got, want);

        // Alice measures 1..13, Bob measures 5..13.
        assert_eq!(party_settings(&bell, Party::A), (1..=13).collect::<Vec<_>>());
        assert_eq!(party_settings(&bell, Party::B), (5..=13).collect::<Vec<_>>());
    }

    #[test]
    fn symmetrize_rejects_incompatible_same_system_pairs() {
        let (_, g) = builtin();
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
            symmetrize(&e, &g),
            Err(Error::IncompatiblePair { .. })
        ));
    }

    #[test]
    fn symmetrize_without_same_system_terms_recertifies_only() {
        let (_, g) = builtin();
        let e = InequalityExpression::new(
            "cross-only",
            Rational::new(99, 1),
            vec![],
            vec![PairTerm {
                kind: PairKind::CrossParty,
                left: OperandRef::a(1),
                right: OperandRef::b(5),
                w: Rational::new(1, 1),
            }],
        )
        .unwrap();
        let out = symmetrize(&e, &g).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.claimed_bound, Rational::new(1, 1));
    }

    #[test]
    fn lhv_bound_trivial_cases() {
        let single_cross = InequalityExpression::new(
            "one",
            Rational::new(1, 1),
            vec![],
            vec![PairTerm {
                kind: PairKind::CrossParty,
                left: OperandRef::a(1),
                right: OperandRef::b(5),
                w: Rational::new(1, 1),
            }],
        )
        .unwrap();
        assert_eq!(lhv_bound(&single_cross).unwrap().bound, Rational::new(1, 1));

        // CHSH-shaped toy: <A1B5> + <A1B6> + <A2B5> - <A2B6> <= 2.
        let mk = |a: u32, b: u32, num: i64| PairTerm {
            kind: PairKind::CrossParty,
            left: OperandRef::a(a),
            right: OperandRef::b(b),
            w: Rational::new(num, 1),
        };
        let chsh = InequalityExpression::new(
            "chsh",
            Rational::new(2, 1),
            vec![],
            vec![mk(1, 5, 1), mk(1, 6, 1), mk(2, 5, 1), mk(2, 6, -1)],
        )
        .unwrap();
        let cert = lhv_bound(&chsh).unwrap();
        assert_eq!(cert.bound, Rational::new(2, 1));
        let (rb, _) = classical_bound_recursive(&chsh).unwrap();
        assert_eq!(rb, cert.bound);
    }

    #[test]
    fn lhv_bound_rejects_same_system_pairs() {
        let (_, g) = builtin();
        let prime = kappa_prime_expression(&g).unwrap();
        assert!(lhv_bound(&prime).is_err());
    }

    #[test]
    fn bell_quantum_values() {
        let (cat, g) = builtin();
        let bell = bell_expression(&g).unwrap();
        let on_psi = quantum_value_bipartite(&bell, &cat, &entangled_state()).unwrap();
        assert!((on_psi - 47.0 / 3.0).abs() <= 1e-9);

        let on_mixed = quantum_value_bipartite(&bell, &cat, &noisy_state(0.0).unwrap()).unwrap();
        assert!((on_mixed - 7.0 / 3.0).abs() <= 1e-9);

        // Hand-sum oracle: every single is 1/3 and every cross pair 1/9 on
        // the maximally mixed state.
        let mut oracle = 0.0;
        for s in &bell.singles {
            oracle += ratio_f64(s.w) / 3.0;
        }
        for p in &bell.pairs {
            oracle += ratio_f64(p.w) / 9.0;
        }
        assert!((on_mixed - oracle).abs() <= 1e-12);
    }

    #[test]
    fn noisy_value_is_affine_in_visibility() {
        let (cat, g) = builtin();
        let bell = bell_expression(&g).unwrap();
        let q1 = quantum_value_bipartite(&bell, &cat, &entangled_state()).unwrap();
        let q0 = quantum_value_bipartite(&bell, &cat, &noisy_state(0.0).unwrap()).unwrap();
        for v in [0.25, 0.5, 0.9, 0.95] {
            let qv = quantum_value_bipartite(&bell, &cat, &noisy_state(v).unwrap()).unwrap();
            assert!((qv - (v * q1 + (1.0 - v) * q0)).abs() <= 1e-10);
        }
    }

    #[test]
    fn visibility_threshold_is_19_20() {
        let (cat, g) = builtin();
        let bell = bell_expression(&g).unwrap();
        let t = visibility_threshold(&bell, &cat).unwrap();
        assert_eq!(t, Rational::new(19, 20));
        assert!((ratio_f64(t) - 0.95).abs() <= 1e-12);
    }

    #[test]
    fn threshold_monotonic_in_bound() {
        let q1 = Rational::new(47, 3);
        let q0 = Rational::new(7, 3);
        let lo = threshold_from_endpoints(Rational::new(14, 1), q1, q0).unwrap();
        let hi = threshold_from_endpoints(Rational::new(15, 1), q1, q0).unwrap();
        assert!(lo < hi);
        // No violation at v = 1: rejected.
        assert!(threshold_from_endpoints(Rational::new(16, 1), q1, q0).is_err());
    }

    #[test]
    fn conversion_soundness_on_entangled_state() {
        let (cat, g) = builtin();
        let prime = kappa_prime_expression(&g).unwrap();
        let psi = entangled_state();
        let mixed3 = CMat::identity(3).scaled_re(1.0 / 3.0);

        let mut replaced_weight = Rational::new(0, 1);
        for p in prime.pairs.iter().filter(|p| p.kind == PairKind::SameSystem) {
            let (i, j) = (p.left.index, p.right.index);
            // Sequential value of the pair on either reduced state (both 1/3).
            let seq = expectation(&compatible_product(&cat, i, j).unwrap(), &mixed3).unwrap();
            let ai = cat.observable(i).unwrap();
            let aj = cat.observable(j).unwrap();
            // Cross correlations reproduce the sequential value...
            let cross_ij = expectation(&tensor(&ai, &aj).unwrap(), psi.rho()).unwrap();
            let cross_ji = expectation(&tensor(&aj, &ai).unwrap(), psi.rho()).unwrap();
            assert!((cross_ij - seq).abs() <= 1e-10);
            assert!((cross_ji - seq).abs() <= 1e-10);
            // ...and the diagonal correlations are perfect.
            for k in [i, j] {
                let ak = cat.observable(k).unwrap();
                let diag = expectation(&tensor(&ak, &ak).unwrap(), psi.rho()).unwrap();
                assert!((diag - 1.0).abs() <= 1e-12);
            }
            replaced_weight += p.w;
        }

        // With perfect diagonals each replaced term shifts by exactly -1,
        // so the totals differ by -sum(w) = +6.
        let before = quantum_value_bipartite(&prime, &cat, &psi).unwrap();
        let bell = symmetrize(&prime, &g).unwrap();
        let after = quantum_value_bipartite(&bell, &cat, &psi).unwrap();
        assert!((before - 29.0 / 3.0).abs() <= 1e-9);
        assert!((after - (before - ratio_f64(replaced_weight))).abs() <= 1e-9);
    }

    #[test]
    fn bob_terms_require_real_catalog() {
        let (_, g) = builtin();
        let bell = bell_expression(&g).unwrap();
        let mut rays = Vec::new();
        for (_, r) in RayCatalog::builtin().iter() {
            rays.push(crate::qmath::CVec3([
                r.0[0] * C64::new(0.0, 1.0),
                r.0[1],
                r.0[2],
            ]));
        }
        let complex_cat = RayCatalog::from_rays(rays).unwrap();
        assert!(matches!(
            quantum_value_bipartite(&bell, &complex_cat, &entangled_state()),
            Err(Error::NonRealCatalog)
        ));
    }

    #[test]
    fn gap_mirrors_single_system() {
        let (cat, g) = builtin();
        let bell = bell_expression(&g).unwrap();
        let q = quantum_value_bipartite(&bell, &cat, &entangled_state()).unwrap();
        let gap = q - ratio_f64(bell.claimed_bound);
        assert!((gap - 2.0 / 3.0).abs() <= 1e-9);
    }

    #[test]
    fn kappa_prime_equals_kappa_on_entangled_state() {
        let (cat, g) = builtin();
        let kappa = kappa_expression(&g).unwrap();
        let mixed3 = CMat::identity(3).scaled_re(1.0 / 3.0);
        let single = quantum_value(&kappa, &cat, &mixed3).unwrap();
        let prime = kappa_prime_expression(&g).unwrap();
        let bipartite = quantum_value_bipartite(&prime, &cat, &entangled_state()).unwrap();
        assert!((single - bipartite).abs() <= 1e-10);
    }
}
