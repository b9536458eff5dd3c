//! Qutrit contextuality toolkit.
//!
//! The crate certifies the noncontextual bound of a 13-observable qutrit
//! inequality by exhaustive assignment enumeration, computes its quantum
//! value exactly for arbitrary states, converts it mechanically into a
//! two-qutrit Bell inequality with a certified local bound, and simulates
//! the corresponding three-path photonic experiments shot by shot.
//!
//! Modules:
//!
//! - [`qmath`]: complex vectors and matrices for dimensions 3 and 9,
//!   with a closed-form Hermitian 3x3 eigensolver.
//! - [`rays`]: the built-in 13-ray catalog, its orthogonality graph, and
//!   the `A = 1 - 2|v><v|` observable constructor.
//! - [`inequality`]: weighted correlation expressions, exhaustive
//!   classical-bound certification in exact integer arithmetic, quantum
//!   values, and the robustness metric.
//! - [`sequential`]: Lueders-rule joint statistics for two sequential
//!   dichotomic measurements.
//! - [`bell`]: the two-step conversion into a bipartite Bell expression,
//!   LHV bound certification, and the visibility threshold.
//! - [`photonics`]: beam-splitter/wedge circuits, measurement devices,
//!   the cascade and two-party setups, and seeded shot sampling.

pub mod bell;
pub mod inequality;
pub mod photonics;
pub mod qmath;
pub mod rays;
pub mod sequential;

use thiserror::Error;

/// Default comparison tolerance for floating-point checks.
///
/// Certified integer results (classical and LHV bounds) never depend on it:
/// they are obtained by exact integer arithmetic over scaled weights.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("invalid density matrix: {reason}")]
    InvalidDensityMatrix { reason: String },
    #[error("vector is not normalized (<v|v> = {norm_sq})")]
    NotNormalized { norm_sq: f64 },
    #[error("ray index {index} out of range 1..={len}")]
    IndexOutOfRange { index: u32, len: usize },
    #[error("invalid catalog: {reason}")]
    InvalidCatalog { reason: String },
    #[error("invalid graph: {reason}")]
    InvalidGraph { reason: String },
    #[error("invalid expression: {reason}")]
    InvalidExpression { reason: String },
    #[error("{slots} assignment slots exceed the enumeration guard of {guard}; partition the expression or use the CLI's partitioned mode")]
    EnumerationGuard { slots: usize, guard: usize },
    #[error("pair ({left}, {right}) is not compatible: commutator norm {norm:.3e}")]
    IncompatiblePair { left: String, right: String, norm: f64 },
    #[error("expression does not violate: quantum value {quantum} <= bound {bound}")]
    NotViolating { quantum: f64, bound: f64 },
    #[error("party split does not cover expression indices: {reason}")]
    InvalidSplit { reason: String },
    #[error("catalog has complex rays; the B = A identification requires a real catalog")]
    NonRealCatalog,
    #[error("visibility {0} out of range [0, 1]")]
    VisibilityOutOfRange(f64),
    #[error("invalid optical element: {reason}")]
    InvalidElement { reason: String },
    #[error("no value can be rationalized from {value} within tolerance {tol:.3e}")]
    NotRational { value: f64, tol: f64 },
    #[error("imaginary residue {residue:.3e} exceeds tolerance {tol:.3e}")]
    ImaginaryResidue { residue: f64, tol: f64 },
    #[error("empty counts for term {0}")]
    EmptyCounts(String),
    #[error("invalid experiment descriptor: {reason}")]
    InvalidDescriptor { reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
