use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorbinError {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The request would exceed a hard resource cap (e.g. enumeration size).
    #[error("resource limit: {0}")]
    Resource(String),

    /// A protocol step failed (key mismatch, missing common randomness, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CorbinError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(CorbinError::Domain(msg.into()))
}
