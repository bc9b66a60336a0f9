use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PilotError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PilotError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("state error: {0}")]
    State(String),

    #[error("numerics error: {0}")]
    Numerics(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PilotError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        PilotError::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PilotError::Io {
            path: path.into(),
            source,
        }
    }
}
