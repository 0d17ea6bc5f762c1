use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("column {0:?} is missing from the CSV header")]
    MissingColumn(String),

    #[error("row {row}, column {column:?}: not a number")]
    Parse { row: usize, column: String },

    #[error("{0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Core(#[from] margnet_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        use margnet_core::Error as C;
        match self {
            Error::Io { .. } | Error::Csv(_) | Error::BadCheckpoint(_) => 1,
            Error::Core(C::InsufficientBudget { .. }) => 3,
            _ => 2,
        }
    }
}
