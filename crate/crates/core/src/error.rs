use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("invalid simplex weights: {0}")]
    InvalidWeights(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    /// The exponential map left the SPD cone; the caller should shrink the step.
    #[error("step too large: result has smallest eigenvalue {0:e}")]
    StepTooLarge(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("insufficient samples: need at least {need}, have {have}")]
    InsufficientSamples { need: usize, have: usize },

    #[error("non-finite value in {term} at index {index}")]
    NonFinite { term: &'static str, index: usize },

    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}
