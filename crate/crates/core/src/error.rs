use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("malformed dataset: {0}")]
    MalformedDataset(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown benchmark function `{0}`")]
    UnknownFunction(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("objective evaluation failed: {0}")]
    Evaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
