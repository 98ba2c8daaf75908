use thiserror::Error;

use crate::jointdiag::JointDiagResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for axis of length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("empty index set")]
    EmptySet,

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("matrix is singular at working precision (condition number {condition:e})")]
    Singular { condition: f64 },

    /// The two-way submodel does not have rank `r`; the full-column-rank
    /// identification condition fails.
    #[error("deficient rank: sigma_r/sigma_1 = {ratio:e} below threshold {threshold:e}")]
    DeficientRank { ratio: f64, threshold: f64 },

    #[error("joint diagonalization did not converge after {} sweeps (criterion {:e})", best.sweeps, best.criterion)]
    NonConvergence { best: Box<JointDiagResult> },

    #[error("column norm {norm:e} of the diagonalizer exceeds the cap {cap:e}")]
    NormCap { norm: f64, cap: f64 },

    #[error("could not align component labels: residual {residual:e} exceeds bound {bound:e}")]
    AlignmentFailure { residual: f64, bound: f64 },

    #[error("point {point} lies outside the support [{lo}, {hi}]")]
    OutOfSupport { point: f64, lo: f64, hi: f64 },

    #[error("quadrature did not reach tolerance {tol:e} with {nodes} nodes")]
    Quadrature { tol: f64, nodes: usize },

    #[error("non-finite observation at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the identification conditions (rank, distinct
    /// eigenvalue columns) as opposed to bad input or numerical trouble.
    pub fn is_identification_failure(&self) -> bool {
        matches!(self, Error::DeficientRank { .. })
    }
}
