use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("group structure does not cover the signal: {0}")]
    GroupCoverage(String),

    #[error("signal support violates the group indicators: {0}")]
    SupportViolation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Probability of an observed quantizer cell underflowed; callers are
    /// expected to keep their previous message rather than abort.
    #[error("quantizer cell probability underflow (log mass {log_mass})")]
    DegenerateCell { log_mass: f64 },

    #[error("precision matrix is not numerically positive definite")]
    FactorizationFailure,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("quadrature normalizer underflowed")]
    ZeroMass,

    #[error("reference signal is identically zero")]
    AllZeroTruth,
}
