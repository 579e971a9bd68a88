//! Error type shared by every estimator in the crate.

use thiserror::Error;

/// Failures reported by model construction, estimators and the benchmark runner.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or vector has a shape that does not match the model dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A covariance that must be symmetric positive definite is not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    /// `DᵀR⁻¹D` is numerically singular, so the input is not identifiable
    /// without a prior; use a sparsity-aware estimator instead.
    #[error("feedthrough Gram matrix is singular at step {step} (sigma_min/sigma_max = {ratio:.3e}); use a sparsity-aware estimator")]
    SingularFeedthrough { step: usize, ratio: f64 },
    /// The input Gram matrix of the state-only recursion is singular.
    #[error("input Gram matrix is singular at step {step}")]
    SingularInputGram { step: usize },
    /// The stacked normal equations of the batch solve are singular.
    #[error("batch Hessian is singular")]
    SingularHessian,
    /// A least-squares Gram matrix (for example `OᵀQ̃⁻¹O`) is singular.
    #[error("Gram matrix is singular: {0}")]
    SingularGram(String),
    /// A NaN or infinity was produced.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    /// A covariance grew beyond the blow-up threshold.
    #[error("covariance norm {0:.3e} exceeds the blow-up threshold")]
    CovarianceBlowup(f64),
    /// The projected input matrix has rank zero.
    #[error("projected input matrix has rank zero")]
    RankCollapse,
    /// The residual ball of a basis-pursuit problem does not meet the range of the operator.
    #[error("basis pursuit problem is infeasible: epsilon {epsilon:.3e} < residual distance {distance:.3e}")]
    Infeasible { epsilon: f64, distance: f64 },
    /// The stacked system would exceed the memory guard.
    #[error("stacked system with {entries} entries exceeds the limit of {limit}")]
    TooLarge { entries: usize, limit: usize },
    /// A normalised error was requested against an all-zero reference.
    #[error("reference signal has zero energy")]
    ZeroReference,
    /// Malformed configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed fixture or CSV content.
    #[error("parse error: {0}")]
    Parse(String),
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
