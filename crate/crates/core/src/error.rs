use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time grids differ: {0}")]
    GridMismatch(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("Picard iteration diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("no convergence after {iterations} iterations (last bound {last_bound:e})")]
    NoConvergence { iterations: usize, last_bound: f64 },
    #[error("system does not provide the {0} Jacobian")]
    MissingJacobian(&'static str),
    #[error("FIFO breakdown on link `{link}` at t = {time}")]
    FifoViolation { link: String, time: f64 },
    #[error("singular matrix in linear solve")]
    Singular,
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("network file: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
