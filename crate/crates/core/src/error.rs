use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its valid range.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called with arguments that break its contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// Observation or feature data is malformed.
    #[error("input error: {0}")]
    Input(String),
    /// Training produced a non-finite value.
    #[error("training error: {0}")]
    Training(String),
    /// Readout mitigation could not be applied; callers fall back to raw data.
    #[error("mitigation error: {0}")]
    Mitigation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
