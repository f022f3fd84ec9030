use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, dimensions or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value outside the mathematical domain of an operation.
    #[error("numeric domain error in {op} at flat index {index}: {value}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    /// API misuse: wrong call order, non-scalar loss, out-of-range step.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("state error: {0}")]
    State(String),

    #[error("ingestion error at {location}: {message}")]
    Ingest { location: String, message: String },

    /// A metric with no defined value on the given data, e.g. AUC of a single class.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
