use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected (m,k)=({0},{1}), found ({2},{3})")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate point: {0}")]
    Degenerate(String),
    #[error("field index {index} out of range for N={dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("finite-difference oracle failed: {0}")]
    FdFailure(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("ellipticity violated: {0}")]
    Ellipticity(String),
    #[error("missing derivatives: {0}")]
    MissingDerivatives(String),
    #[error("empty domain: {0}")]
    EmptyDomain(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("discrete operator is not negative definite")]
    Indefinite,
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
