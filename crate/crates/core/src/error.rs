use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pose-regression pipeline.
///
/// Domain errors describe invalid inputs (zero-norm quaternions, empty
/// clouds, malformed files). Contract violations inside the numeric core
/// (shape mismatches) panic instead; they indicate bugs, not bad data.
#[derive(Debug, Error)]
pub enum AprError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },

    #[error("config error: {0}")]
    Config(String),
}

impl AprError {
    pub fn domain(msg: impl Into<String>) -> Self {
        AprError::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, msg: impl std::fmt::Display) -> Self {
        AprError::Io {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AprError>;
