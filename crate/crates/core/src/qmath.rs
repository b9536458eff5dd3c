//! Complex linear algebra for dimensions 3 and 9.
//!
//! Everything here is dense, double-precision and immutable after
//! construction. The eigensolver for 3x3 Hermitian matrices uses the
//! closed-form characteristic-polynomial method with one Rayleigh-quotient
//! refinement pass; degenerate eigenspaces get an arbitrary orthonormal
//! basis, and callers must not depend on the basis choice inside one.

use num_complex::Complex64;

use crate::{Error, Result, DEFAULT_TOL};

pub type C64 = Complex64;

/// Tolerance used for Hermitian/unitary structure checks.
pub const STRUCT_TOL: f64 = 1e-12;

/// A vector in complex 3-space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CVec3(pub [C64; 3]);

impl CVec3 {
    pub fn new(a: C64, b: C64, c: C64) -> Self {
        CVec3([a, b, c])
    }

    pub fn from_real(r: [f64; 3]) -> Self {
        CVec3([C64::new(r[0], 0.0), C64::new(r[1], 0.0), C64::new(r[2], 0.0)])
    }

    pub fn zero() -> Self {
        CVec3([C64::ZERO; 3])
    }

    /// Standard basis vector `e_k`, `k` in `0..3`.
    pub fn basis(k: usize) -> Self {
        let mut v = Self::zero();
        v.0[k] = C64::ONE;
        v
    }

    /// Hermitian inner product `<self|other>` (conjugate-linear in `self`).
    pub fn inner(&self, other: &CVec3) -> C64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, s: C64) -> CVec3 {
        CVec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn add(&self, other: &CVec3) -> CVec3 {
        CVec3([
            self.0[0] + other.0[0],
            self.0[1] + other.0[1],
            self.0[2] + other.0[2],
        ])
    }

    pub fn sub(&self, other: &CVec3) -> CVec3 {
        CVec3([
            self.0[0] - other.0[0],
            self.0[1] - other.0[1],
            self.0[2] - other.0[2],
        ])
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sq() - 1.0).abs() <= tol
    }

    pub fn normalized(&self) -> Result<CVec3> {
        let n = self.norm();
        if n < 1e-300 {
            return Err(Error::NotNormalized { norm_sq: 0.0 });
        }
        Ok(self.scaled(C64::new(1.0 / n, 0.0)))
    }

    /// Rank-1 projector `|v><v|`.
    pub fn outer(&self) -> CMat {
        let mut m = CMat::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                *m.at_mut(i, j) = self.0[i] * self.0[j].conj();
            }
        }
        m
    }

    /// True when every amplitude has imaginary part within `tol` of zero.
    pub fn is_real(&self, tol: f64) -> bool {
        self.0.iter().all(|a| a.im.abs() <= tol)
    }

    /// Algebraic (bilinear, non-conjugating) cross product.
    pub fn cross(&self, other: &CVec3) -> CVec3 {
        let a = &self.0;
        let b = &other.0;
        CVec3([
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ])
    }

    pub fn conj(&self) -> CVec3 {
        CVec3([self.0[0].conj(), self.0[1].conj(), self.0[2].conj()])
    }
}

/// A dense complex matrix of dimension 3 or 9, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    dim: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(dim: usize) -> Self {
        CMat {
            dim,
            data: vec![C64::ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            *m.at_mut(i, i) = C64::ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                *m.at_mut(i, j) = f(i, j);
            }
        }
        m
    }

    /// 3x3 matrix from real row arrays.
    pub fn from_real_rows(rows: [[f64; 3]; 3]) -> Self {
        Self::from_fn(3, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }

    pub fn add(&self, other: &CMat) -> CMat {
        assert_eq!(self.dim, other.dim);
        CMat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!(self.dim, other.dim);
        CMat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scaled(&self, s: C64) -> CMat {
        CMat {
            dim: self.dim,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn scaled_re(&self, s: f64) -> CMat {
        self.scaled(C64::new(s, 0.0))
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == C64::ZERO {
                    continue;
                }
                for j in 0..n {
                    *out.at_mut(i, j) += a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMat {
        let n = self.dim;
        CMat::from_fn(n, |i, j| self.at(j, i).conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.at(i, i)).sum()
    }

    /// Apply to a 3-vector; panics unless `dim == 3`.
    pub fn apply3(&self, v: &CVec3) -> CVec3 {
        assert_eq!(self.dim, 3);
        let mut out = [C64::ZERO; 3];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..3 {
                *o += self.at(i, j) * v.0[j];
            }
        }
        CVec3(out)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let prod = self.adjoint().mul(self);
        prod.max_abs_diff(&CMat::identity(self.dim)) <= tol
    }

    /// Max-entry norm of `[self, other] = self*other - other*self`.
    pub fn commutator_norm(&self, other: &CMat) -> f64 {
        self.mul(other).max_abs_diff(&other.mul(self))
    }

    pub fn check_hermitian(&self, tol: f64) -> Result<()> {
        let dev = self.max_abs_diff(&self.adjoint());
        if dev > tol {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(())
    }

    /// Semidefinite-tolerant Cholesky test: accepts eigenvalues down to
    /// `-tol * scale`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let n = self.dim;
        let scale = (0..n)
            .map(|i| self.at(i, i).re.abs())
            .fold(1.0f64, f64::max);
        let ptol = tol * scale;
        let mut l = vec![C64::ZERO; n * n];
        for k in 0..n {
            let mut d = self.at(k, k).re;
            for j in 0..k {
                d -= l[k * n + j].norm_sqr();
            }
            if d < -ptol {
                return false;
            }
            if d > ptol {
                let dk = d.sqrt();
                l[k * n + k] = C64::new(dk, 0.0);
                for i in (k + 1)..n {
                    let mut c = self.at(i, k);
                    for j in 0..k {
                        c -= l[i * n + j] * l[k * n + j].conj();
                    }
                    l[i * n + k] = c / dk;
                }
            } else {
                // Zero pivot of a PSD matrix forces the rest of the column
                // to vanish as well.
                let col_tol = ((d.abs() + ptol) * scale).sqrt() * 8.0;
                for i in (k + 1)..n {
                    let mut c = self.at(i, k);
                    for j in 0..k {
                        c -= l[i * n + j] * l[k * n + j].conj();
                    }
                    if c.norm() > col_tol {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Validates Hermiticity, unit trace and positive semidefiniteness of a
/// density matrix within `tol`.
pub fn check_density_matrix(rho: &CMat, tol: f64) -> Result<()> {
    if rho.dim() != 3 && rho.dim() != 9 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: rho.dim(),
        });
    }
    rho.check_hermitian(tol)?;
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
        return Err(Error::InvalidDensityMatrix {
            reason: format!("trace {} != 1", tr),
        });
    }
    if !rho.is_psd(tol) {
        return Err(Error::InvalidDensityMatrix {
            reason: "not positive semidefinite".into(),
        });
    }
    Ok(())
}

/// Kronecker product of two 3x3 matrices.
///
/// Index convention: `(a ⊗ b)[3*i1+i2, 3*j1+j2] = a[i1,j1] * b[i2,j2]`.
pub fn tensor(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: a.dim(),
        });
    }
    if b.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: b.dim(),
        });
    }
    Ok(CMat::from_fn(9, |i, j| {
        a.at(i / 3, j / 3) * b.at(i % 3, j % 3)
    }))
}

/// `tr(m * rho)` for Hermitian `m` and a valid density matrix `rho`.
///
/// The imaginary residue of the trace is checked against 1e-10 and then
/// discarded.
pub fn expectation(m: &CMat, rho: &CMat) -> Result<f64> {
    if m.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: rho.dim(),
        });
    }
    m.check_hermitian(DEFAULT_TOL)?;
    check_density_matrix(rho, DEFAULT_TOL)?;
    let tr = m.mul(rho).trace();
    if tr.im.abs() > 1e-10 {
        return Err(Error::ImaginaryResidue {
            residue: tr.im.abs(),
            tol: 1e-10,
        });
    }
    Ok(tr.re)
}

/// Eigenvalues of a 3x3 Hermitian matrix via the trigonometric solution of
/// the characteristic cubic, ascending.
fn eigenvalues3(h: &CMat) -> [f64; 3] {
    let p1 = h.at(0, 1).norm_sqr() + h.at(0, 2).norm_sqr() + h.at(1, 2).norm_sqr();
    let q = h.trace().re / 3.0;
    let d0 = h.at(0, 0).re - q;
    let d1 = h.at(1, 1).re - q;
    let d2 = h.at(2, 2).re - q;
    let p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1;
    if p2 <= 0.0 {
        return [q, q, q];
    }
    let p = (p2 / 6.0).sqrt();
    let b = h
        .sub(&CMat::identity(3).scaled_re(q))
        .scaled_re(1.0 / p);
    let det = det3(&b).re;
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let mid = 3.0 * q - hi - lo;
    [lo, mid, hi]
}

fn det3(m: &CMat) -> C64 {
    m.at(0, 0) * (m.at(1, 1) * m.at(2, 2) - m.at(1, 2) * m.at(2, 1))
        - m.at(0, 1) * (m.at(1, 0) * m.at(2, 2) - m.at(1, 2) * m.at(2, 0))
        + m.at(0, 2) * (m.at(1, 0) * m.at(2, 1) - m.at(1, 1) * m.at(2, 0))
}

/// Nullspace direction of `h - lambda*I` from the largest cross product of
/// two rows. Returns `None` when all cross products degenerate (eigenvalue
/// not isolated).
fn eigvec_by_cross(h: &CMat, lambda: f64) -> Option<CVec3> {
    let m = h.sub(&CMat::identity(3).scaled_re(lambda));
    let rows: Vec<CVec3> = (0..3)
        .map(|i| CVec3([m.at(i, 0), m.at(i, 1), m.at(i, 2)]))
        .collect();
    let candidates = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let best = candidates
        .iter()
        .max_by(|a, b| a.norm_sq().total_cmp(&b.norm_sq()))?;
    let scale = h.max_abs_entry().max(1.0);
    if best.norm() <= 1e-13 * scale * scale {
        return None;
    }
    best.normalized().ok()
}

/// Any orthonormal pair spanning the complement of unit vector `v`.
fn orthonormal_complement(v: &CVec3) -> (CVec3, CVec3) {
    let k = (0..3)
        .min_by(|&a, &b| v.0[a].norm_sqr().total_cmp(&v.0[b].norm_sqr()))
        .unwrap();
    let e = CVec3::basis(k);
    let proj = v.inner(&e);
    let u = e.sub(&v.scaled(proj)).normalized().unwrap();
    // conj(v x u) is Hermitian-orthogonal to both and has unit norm.
    let w = v.cross(&u).conj().normalized().unwrap();
    (u, w)
}

/// Eigen-decomposition of a 3x3 Hermitian matrix.
///
/// Returns eigenvalues ascending with matching orthonormal eigenvectors.
/// Postconditions: `m v_k = lambda_k v_k` and pairwise orthonormality
/// within 1e-9.
pub fn eig3_hermitian(m: &CMat) -> Result<([f64; 3], [CVec3; 3])> {
    if m.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: m.dim(),
        });
    }
    m.check_hermitian(DEFAULT_TOL)?;
    let h = m.add(&m.adjoint()).scaled_re(0.5);
    let ev = eigenvalues3(&h);
    let scale = ev[0].abs().max(ev[2].abs()).max(1.0);

    if ev[2] - ev[0] <= 1e-14 * scale {
        // Multiple of the identity.
        return Ok((ev, [CVec3::basis(0), CVec3::basis(1), CVec3::basis(2)]));
    }

    // Extract the best-isolated eigenvalue by cross products, then solve the
    // deflated 2x2 Hermitian block in the orthogonal complement.
    let iso = if ev[1] - ev[0] >= ev[2] - ev[1] { 0 } else { 2 };
    let v_iso = eigvec_by_cross(&h, ev[iso]).ok_or(Error::NotHermitian {
        deviation: f64::NAN,
    })?;
    let (u, w) = orthonormal_complement(&v_iso);

    let hu = h.apply3(&u);
    let hw = h.apply3(&w);
    let a = u.inner(&hu).re;
    let b = u.inner(&hw);
    let c = w.inner(&hw).re;

    let (p1, p2) = eig2_hermitian(a, b, c);
    let mk = |alpha: C64, beta: C64| -> CVec3 {
        u.scaled(alpha).add(&w.scaled(beta)).normalized().unwrap()
    };
    let v1 = mk(p1.1, p1.2);
    let v2 = mk(p2.1, p2.2);

    let mut triples = [(ev[iso], v_iso), (p1.0, v1), (p2.0, v2)];
    // One refinement pass: replace each eigenvalue by its Rayleigh quotient.
    for (lam, vec) in triples.iter_mut() {
        *lam = vec.inner(&h.apply3(vec)).re;
    }
    triples.sort_by(|x, y| x.0.total_cmp(&y.0));

    // Re-orthonormalize in order; degeneracy makes this a free choice.
    let v0 = triples[0].1.normalized().unwrap();
    let mut t1 = triples[1].1;
    t1 = t1.sub(&v0.scaled(v0.inner(&t1))).normalized().unwrap();
    let mut t2 = triples[2].1;
    t2 = t2.sub(&v0.scaled(v0.inner(&t2)));
    t2 = t2.sub(&t1.scaled(t1.inner(&t2))).normalized().unwrap();

    Ok(([triples[0].0, triples[1].0, triples[2].0], [v0, t1, t2]))
}

/// Closed-form eigensystem of `[[a, b], [conj(b), c]]` with real `a`, `c`.
/// Returns `((mu, alpha, beta), ...)` pairs, unordered.
fn eig2_hermitian(a: f64, b: C64, c: f64) -> ((f64, C64, C64), (f64, C64, C64)) {
    let off = b.norm();
    let mean = (a + c) / 2.0;
    let delta = (a - c) / 2.0;
    let r = (delta * delta + off * off).sqrt();
    let (mu_hi, mu_lo) = (mean + r, mean - r);
    if off <= 1e-300 {
        return (
            (a, C64::ONE, C64::ZERO),
            (c, C64::ZERO, C64::ONE),
        );
    }
    let vec_for = |mu: f64| -> (C64, C64) {
        // Row candidates (b, mu - a) and (mu - c, conj(b)); pick the larger.
        let c1 = (b, C64::new(mu - a, 0.0));
        let c2 = (C64::new(mu - c, 0.0), b.conj());
        let n1 = c1.0.norm_sqr() + c1.1.norm_sqr();
        let n2 = c2.0.norm_sqr() + c2.1.norm_sqr();
        if n1 >= n2 {
            c1
        } else {
            c2
        }
    };
    let (a1, b1) = vec_for(mu_hi);
    let (a2, b2) = vec_for(mu_lo);
    ((mu_hi, a1, b1), (mu_lo, a2, b2))
}
