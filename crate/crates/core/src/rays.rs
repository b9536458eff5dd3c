//! The 13-ray catalog, its orthogonality graph, and the reflection
//! observables `A_i = 1 - 2|v_i><v_i|`.
//!
//! Indices are 1-based everywhere, including serialized output, so results
//! stay directly comparable across reports.

use serde::{Deserialize, Serialize};

use crate::qmath::{CMat, CVec3, C64};
use crate::{Error, Result, DEFAULT_TOL};

/// An ordered list of normalized rays in complex 3-space, indexed 1..=n.
#[derive(Clone, Debug)]
pub struct RayCatalog {
    rays: Vec<CVec3>,
}

impl RayCatalog {
    /// The built-in 13-ray catalog.
    ///
    /// Rays 1-4 have components `(+-1, +-1, +-1)/sqrt(3)` with at most one
    /// minus sign, rays 5-10 have two `+-1/sqrt(2)` components, and rays
    /// 11-13 are the standard basis.
    pub fn builtin() -> Self {
        let s3 = 1.0 / 3.0_f64.sqrt();
        let s2 = 1.0 / 2.0_f64.sqrt();
        let reals: [[f64; 3]; 13] = [
            [-s3, s3, s3],
            [s3, -s3, s3],
            [s3, s3, -s3],
            [s3, s3, s3],
            [0.0, s2, s2],
            [0.0, s2, -s2],
            [s2, 0.0, s2],
            [s2, 0.0, -s2],
            [s2, s2, 0.0],
            [s2, -s2, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        RayCatalog {
            rays: reals.iter().map(|r| CVec3::from_real(*r)).collect(),
        }
    }

    /// A user-supplied catalog; needs at least 3 normalized rays.
    pub fn from_rays(rays: Vec<CVec3>) -> Result<Self> {
        if rays.len() < 3 {
            return Err(Error::InvalidCatalog {
                reason: format!("need at least 3 rays, got {}", rays.len()),
            });
        }
        for (k, r) in rays.iter().enumerate() {
            if !r.is_normalized(1e-9) {
                return Err(Error::InvalidCatalog {
                    reason: format!("ray {} is not normalized (<v|v> = {})", k + 1, r.norm_sq()),
                });
            }
        }
        Ok(RayCatalog { rays })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Ray by 1-based index.
    pub fn ray(&self, index: u32) -> Result<&CVec3> {
        if index == 0 || index as usize > self.rays.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.rays.len(),
            });
        }
        Ok(&self.rays[index as usize - 1])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &CVec3)> {
        self.rays.iter().enumerate().map(|(k, r)| (k as u32 + 1, r))
    }

    /// True when every amplitude of every ray is real within `tol`.
    pub fn is_real(&self, tol: f64) -> bool {
        self.rays.iter().all(|r| r.is_real(tol))
    }

    /// The dichotomic observable `A_i = 1 - 2|v_i><v_i|` with spectrum
    /// `{-1, 1, 1}` and `A_i |v_i> = -|v_i>`.
    pub fn observable(&self, index: u32) -> Result<CMat> {
        let v = self.ray(index)?;
        Ok(CMat::identity(3).sub(&v.outer().scaled_re(2.0)))
    }

    /// The `-1` projector `|v_i><v_i|`.
    pub fn projector(&self, index: u32) -> Result<CMat> {
        Ok(self.ray(index)?.outer())
    }

    pub fn to_json(&self) -> Vec<RayJson> {
        self.iter()
            .map(|(index, r)| RayJson {
                index,
                re: [r.0[0].re, r.0[1].re, r.0[2].re],
                im: [r.0[0].im, r.0[1].im, r.0[2].im],
            })
            .collect()
    }

    pub fn from_json(entries: &[RayJson]) -> Result<Self> {
        let mut sorted = entries.to_vec();
        sorted.sort_by_key(|e| e.index);
        for (k, e) in sorted.iter().enumerate() {
            if e.index != k as u32 + 1 {
                return Err(Error::InvalidCatalog {
                    reason: format!("indices must cover 1..=n exactly, missing {}", k + 1),
                });
            }
        }
        Self::from_rays(
            sorted
                .iter()
                .map(|e| {
                    CVec3([
                        C64::new(e.re[0], e.im[0]),
                        C64::new(e.re[1], e.im[1]),
                        C64::new(e.re[2], e.im[2]),
                    ])
                })
                .collect(),
        )
    }
}

/// Serialized form of one catalog entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RayJson {
    pub index: u32,
    pub re: [f64; 3],
    pub im: [f64; 3],
}

/// Symmetric orthogonality indicator: `gamma[i][j] = 1` iff
/// `|<v_i|v_j>| <= tol`, zero diagonal.
#[derive(Clone, Debug)]
pub struct OrthogonalityGraph {
    n: usize,
    adj: Vec<bool>,
}

impl OrthogonalityGraph {
    /// Builds the indicator from pairwise inner products.
    ///
    /// The built-in rays are constructed from exact expressions, so true
    /// inner products are either 0 or at least `1/sqrt(6)`; the tolerance
    /// is never ambiguous there.
    pub fn build(catalog: &RayCatalog) -> Self {
        let n = catalog.len();
        let mut adj = vec![false; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let ip = catalog.rays[i].inner(&catalog.rays[j]).norm();
                if ip <= DEFAULT_TOL {
                    adj[i * n + j] = true;
                    adj[j * n + i] = true;
                }
            }
        }
        OrthogonalityGraph { n, adj }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// 1-based adjacency test.
    pub fn is_edge(&self, i: u32, j: u32) -> bool {
        if i == 0 || j == 0 || i as usize > self.n || j as usize > self.n {
            return false;
        }
        self.adj[(i as usize - 1) * self.n + (j as usize - 1)]
    }

    /// Unordered edges `(i, j)` with `i < j`, 1-based.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.adj[i * self.n + j] {
                    out.push((i as u32 + 1, j as u32 + 1));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }
}
