use thiserror::Error;

/// Errors raised by estimators, generators and file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("iteration did not converge after {iterations} steps (last gap {gap:.3e})")]
    NonConvergence { iterations: usize, gap: f64 },

    #[error("input is identically zero")]
    ZeroInput,

    #[error("non-finite entry at position {0}")]
    NonFinite(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for failures of the numerical kernels (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_) | Error::NonConvergence { .. } | Error::ZeroInput | Error::Experiment(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
