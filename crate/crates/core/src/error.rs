use thiserror::Error;

use crate::mps::MpsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An API contract was violated by the caller (bad lengths, double fixings, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error(transparent)]
    Mps(#[from] MpsError),

    #[error("external solver: {0}")]
    ExternalSolver(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
