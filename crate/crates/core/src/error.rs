use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input. `line` and `column` are 1-based; `line` is 0 when the
    /// input is not line oriented.
    #[error("{what}: parse error at line {line}, column {column}: {message}")]
    Parse {
        what: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("image {0} has no positive categories and is not eligible for search")]
    IneligibleImage(String),

    #[error("no description candidates for object '{object}' in image {image_id}")]
    EmptyPool { image_id: String, object: String },

    #[error("filters removed every {0}")]
    EmptyFilterResult(&'static str),

    #[error("embedding bundle: {0}")]
    Bundle(String),

    #[error("embedding key '{key}' not found (nearest: {})", nearest.join(", "))]
    MissingKey { key: String, nearest: Vec<String> },

    #[error("embedding key '{key}' has kind {actual}, expected {expected}")]
    KindMismatch {
        key: String,
        expected: String,
        actual: String,
    },

    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("cosine of a zero vector")]
    ZeroVector,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{what}: unsupported schema version {found} (expected {expected})")]
    SchemaVersion {
        what: &'static str,
        found: u64,
        expected: u64,
    },

    #[error("authentication rejected by endpoint (HTTP {0})")]
    Auth(u16),

    #[error("request failed: {0}")]
    Request(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(what: impl Into<String>, line: usize, err: &serde_json::Error) -> Self {
        Error::Parse {
            what: what.into(),
            line: if line == 0 { err.line() } else { line },
            column: err.column(),
            message: err.to_string(),
        }
    }
}
