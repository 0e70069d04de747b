use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid trace {id}: {message}")]
    InvalidTrace { id: String, message: String },

    #[error("inconsistent deletion labels: {0}")]
    Labels(String),

    #[error("boundary {boundary} outside [0, {len}]")]
    Boundary { boundary: usize, len: usize },

    #[error("non-finite value in {head} at step {step}")]
    NonFinite { head: &'static str, step: usize },

    #[error("non-finite loss at epoch {epoch}, trace {id}")]
    NonFiniteLoss { epoch: usize, id: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
