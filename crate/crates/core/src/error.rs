use thiserror::Error;

/// Errors produced by the design, propagation and validation pipelines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },

    #[error("collocation design matrix is rank deficient (reciprocal condition {rcond:.3e})")]
    RankDeficient { rcond: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("integration blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("measurement covariance is singular at t = {t}")]
    SingularCovariance { t: f64 },

    #[error("model evaluation failed at xi = {xi:?}: {source}")]
    NodeFailure { xi: Vec<f64>, source: Box<Error> },

    #[error("optimizer failed: {0}")]
    Solver(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.into(), reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
