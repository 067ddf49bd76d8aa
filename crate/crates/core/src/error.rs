use thiserror::Error;

/// Errors raised by problem oracles, iteration engines and certificates.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numeric failure in {what} after {iterations} iterations")]
    NumericFailure { what: String, iterations: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("diverged({t})")]
    Diverged { t: usize },

    #[error("certificate failure at {location}: slack {slack:e}")]
    CertificateFailure { location: String, slack: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn unsupported(msg: impl Into<String>) -> Error {
    Error::Unsupported(msg.into())
}
