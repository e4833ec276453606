use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdsrError {
    #[error(transparent)]
    Tensor(#[from] ndtensor::TensorError),
    #[error("{path}: {source}")]
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
    #[error("data integrity: {0}")]
    DataIntegrity(String),
    #[error("dataset is empty after {0}")]
    EmptyDataset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AdsrError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> AdsrError {
    let path = path.into();
    move |source| AdsrError::Io { path, source }
}
