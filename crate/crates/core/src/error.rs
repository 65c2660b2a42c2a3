use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("action {action} out of range for {action_count} actions")]
    ActionOutOfRange { action: usize, action_count: usize },

    #[error("weight {value} exceeds half-precision range")]
    HalfOverflow { value: f32 },

    #[error("task-mapper has no learnt classes")]
    NoClasses,

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("session {session}: {message}")]
    Session { session: usize, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
