use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are grouped by how a caller should react: configuration problems,
/// bad input data, and numerical failures during training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("ingestion error (ar_id {ar_id:?}, line {line:?}): {message}")]
    Ingestion {
        ar_id: Option<u64>,
        line: Option<usize>,
        message: String,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn ingest(ar_id: Option<u64>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            ar_id,
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
