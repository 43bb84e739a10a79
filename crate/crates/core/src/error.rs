//! Error type shared across the selection engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlapError {
    /// Input dimensions disagree with the batch's declared shape.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A sequence carried no tokens.
    #[error("empty token sequence")]
    EmptySequence,

    /// Second-moment state consulted before any update was applied.
    #[error("second-moment state is uninitialized (step = 0)")]
    UninitializedState,

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A record failed schema validation. `line` is 1-based when the record
    /// came from a line-delimited file, 0 when it did not.
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    /// Batch-level consistency violation (e.g. duplicate sample ids).
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SlapError>;

impl SlapError {
    pub fn schema(line: usize, message: impl Into<String>) -> Self {
        SlapError::Schema { line, message: message.into() }
    }
}
