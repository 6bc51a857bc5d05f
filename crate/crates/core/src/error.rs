use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The two-phase detector protocol was not respected.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A Monte-Carlo estimate could not be formed at all.
    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    /// An estimate was formed but its sample support is too thin to trust.
    #[error("estimation unstable: {0}")]
    EstimationUnstable(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
