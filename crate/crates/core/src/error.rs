use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed input data: bad columns, bad labels, duplicate ids. Carries
    /// the offending record number when one exists (1-based, excluding the
    /// header for CSV).
    #[error("schema violation{}: {msg}", row.map(|r| format!(" at record {r}")).unwrap_or_default())]
    Schema { msg: String, row: Option<usize> },

    #[error("embedding file {path}, line {line}: {msg}")]
    EmbeddingParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("token index {index} out of vocabulary range (max {max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("unsupported architecture configuration: {0}")]
    UnsupportedArch(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Iterative solver ran out of its iteration budget; carries the last
    /// marginal residual for diagnosis.
    #[error("solver did not converge within {max_iter} iterations (residual {residual:e})")]
    NoConvergence { max_iter: usize, residual: f64 },

    #[error("model file {path}: {msg}")]
    ModelFormat { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema {
            msg: msg.into(),
            row: None,
        }
    }

    pub fn schema_at(row: usize, msg: impl Into<String>) -> Self {
        Error::Schema {
            msg: msg.into(),
            row: Some(row),
        }
    }
}
