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

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("impossible domain config: {0}")]
    ImpossibleConfig(String),

    #[error("dataset at {path} is corrupt: {reason}")]
    DatasetCorrupt { path: PathBuf, reason: String },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("supervision violation: {0}")]
    Supervision(String),

    #[error(
        "non-finite loss at iteration {iteration} (source images {source_images:?}, target images {target_images:?})"
    )]
    NonFinite {
        iteration: u64,
        source_images: Vec<usize>,
        target_images: Vec<usize>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
