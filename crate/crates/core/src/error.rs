//! Shared error type for the whole crate.

/// Errors produced by tensor algebra, data handling, training and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum NgfError {
    /// Incompatible tensor or embedding dimensions.
    #[error("dimension mismatch: {0}")]
    Shape(String),
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A required sampling pool was empty.
    #[error("sampling error: {0}")]
    Sampling(String),
    /// Corpus or fixture contents are invalid.
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite values or other numeric failures.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A metric is undefined for the given inputs (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// Malformed checkpoint container.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NgfError>;
