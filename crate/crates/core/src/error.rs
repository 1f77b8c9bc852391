use pqllama_fhe::FheError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Fhe(#[from] FheError),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("value {value} outside [0, {limit})")]
    Range { value: i64, limit: i64 },
    #[error("lookup table error: {0}")]
    Table(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sequence capacity {capacity} exceeded")]
    Capacity { capacity: usize },
    #[error("plan error: {0}")]
    Plan(String),
    #[error("circuit cannot be compiled: {0}")]
    Uncompilable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("division by zero in {0}")]
    Division(&'static str),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::File { path: path.as_ref().display().to_string(), source }
    }
}
