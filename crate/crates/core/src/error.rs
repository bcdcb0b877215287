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

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("header mismatch: missing columns {missing:?}, unexpected columns {extra:?}")]
    HeaderMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("row {row}, column `{column}`: cannot parse {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: label must be 0 or 1, found {value:?}")]
    InvalidLabel { row: usize, value: String },

    #[error("row {row}: timestamp {timestamp} in session {participant}/{session} is not after {previous}")]
    NonMonotonicTimestamp {
        row: usize,
        participant: String,
        session: String,
        timestamp: f64,
        previous: f64,
    },

    #[error("row {row}: negative timestamp {timestamp}")]
    NegativeTimestamp { row: usize, timestamp: f64 },

    #[error("row {row}, feature `{column}`: non-finite value")]
    NonFinite { row: usize, column: String },

    #[error("table has no rows")]
    EmptyTable,

    #[error("no game bounds for session {participant}/{session}")]
    MissingGameBounds {
        participant: String,
        session: String,
    },

    #[error("feature set mismatch: expected {expected} features, found {found}")]
    FeatureMismatch { expected: usize, found: usize },

    #[error("unknown feature or group `{0}`")]
    UnknownFeature(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
