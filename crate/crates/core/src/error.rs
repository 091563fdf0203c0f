use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },

    #[error("invalid UTF-8 at byte offset {offset}")]
    Utf8 { offset: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("score {value} out of range [-0.5, 0.5]")]
    ScoreRange { value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot split into {k} folds: {reason}")]
    Folds { k: usize, reason: String },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("inconsistent labels for user {user}: {first} vs {second}")]
    InconsistentLabels {
        user: String,
        first: f64,
        second: f64,
    },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            err: source,
        }
    }
}
