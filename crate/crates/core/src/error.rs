use thiserror::Error;

/// Errors raised by the detectors, the simulator and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A Cholesky pivot fell at or below the tolerance.
    #[error("numerical failure at pivot {pivot}: {reason}")]
    NumericalFailure { pivot: usize, reason: String },

    #[error("unsupported scale: {0}")]
    UnsupportedScale(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
