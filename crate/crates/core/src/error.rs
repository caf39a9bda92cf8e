use thiserror::Error;

/// Errors raised by estimators, samplers and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("matrix is singular: smallest eigenvalue {min_eigenvalue:e} below floor {floor:e}")]
    Singular { min_eigenvalue: f64, floor: f64 },

    #[error("sample is empty")]
    EmptySample,

    #[error("too few observations: need at least {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("matrix has zero trace")]
    ZeroTrace,

    #[error("required moment does not exist: {0}")]
    MomentUndefined(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
