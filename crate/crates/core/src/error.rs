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

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("k-core filtering with min degree {min_degree} left nothing")]
    EmptyAfterFilter { min_degree: usize },

    #[error("user {user} has {count} interactions, cannot populate train/valid/test")]
    Split { user: usize, count: usize },

    #[error("user {user} has no candidate items left")]
    Exhausted { user: usize },

    #[error("all items are masked")]
    AllMasked,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite:?})")]
    Diverged {
        epoch: usize,
        last_finite: Option<usize>,
    },

    #[error("item {item:?} is degenerate: self-similarity equals its minimum reference")]
    DegenerateItem { item: Option<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fingerprint mismatch for {what}: checkpoint has {expected}, found {found}")]
    Fingerprint {
        what: String,
        expected: String,
        found: String,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
