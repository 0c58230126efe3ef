use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the audit pipeline.
///
/// Variants are grouped by how a caller is expected to react: input and
/// configuration problems, backend problems, and statistical precondition
/// failures. [`SmiError::class`] exposes that grouping.
#[derive(Debug, Error)]
pub enum SmiError {
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("backend transport error: {message}")]
    Transport { message: String, retryable: bool },

    #[error("backend capability error: {0}")]
    Capability(String),

    #[error("token alignment error: {0}")]
    Alignment(String),

    /// A predicted-token-only scoring pass stopped part way. `completed`
    /// holds the suffix positions that were already scored.
    #[error("scoring interrupted after {} of {total} tokens: {message}", completed.len())]
    Interrupted {
        completed: Vec<crate::scoring::TokenScore>,
        total: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the CLI to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Backend,
    Statistical,
}

impl SmiError {
    pub fn class(&self) -> ErrorClass {
        match self {
            SmiError::Parse { .. }
            | SmiError::Schema { .. }
            | SmiError::Integrity(_)
            | SmiError::Config(_)
            | SmiError::Io { .. }
            | SmiError::Json(_) => ErrorClass::Input,
            SmiError::Transport { .. }
            | SmiError::Capability(_)
            | SmiError::Alignment(_)
            | SmiError::Interrupted { .. } => ErrorClass::Backend,
            SmiError::Domain(_) => ErrorClass::Statistical,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SmiError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn transport(message: impl Into<String>) -> Self {
        SmiError::Transport {
            message: message.into(),
            retryable: true,
        }
    }
}

pub type Result<T, E = SmiError> = std::result::Result<T, E>;
