use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the parsing, training and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: a sentence needs at least one token")]
    EmptyInput,

    #[error("invalid score: {0}")]
    InvalidScore(String),

    #[error("structural annotation error: {0}")]
    Annotation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sentence length {n} exceeds the enumeration bound {max}")]
    TooLong { n: usize, max: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: validation error: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("model file integrity error: {0}")]
    Integrity(String),

    #[error("unsupported model file version: {0}")]
    Version(String),

    #[error("non-finite gradient in {tensor} at step {step}")]
    NonFiniteGradient { tensor: String, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
