use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV in {path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("duplicate observation for location ({lat}, {lon}) in year {year}")]
    DuplicateKey { lat: f64, lon: f64, year: i32 },

    #[error("incomplete year grid: {0}")]
    IncompleteGrid(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("singular linear system")]
    Singular,

    #[error("missing value in {field} for location ({lat}, {lon}) year {year}")]
    MissingValue {
        field: &'static str,
        lat: f64,
        lon: f64,
        year: i32,
    },

    #[error("baseline year {0} not present in dataset")]
    MissingBaseline(i32),

    #[error("feature manifest mismatch: model expects {expected}, input has {actual}")]
    ManifestMismatch { expected: String, actual: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the input data rather than the program.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Serde(_))
    }
}
