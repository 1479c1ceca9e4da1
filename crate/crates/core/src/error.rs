use thiserror::Error;

/// Errors raised by the explanation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ListenError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid score {value} at item {index}")]
    InvalidScore { index: usize, value: f64 },

    #[error("index out of range: {what} {index} (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("accuracy undefined: no item has a non-zero reference label")]
    UndefinedAccuracy,
}

pub type Result<T> = std::result::Result<T, ListenError>;
