use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record does not match its file schema.
    #[error("{path}:{line}: schema violation: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{id}` in {what}")]
    DuplicateId { what: &'static str, id: String },

    #[error("non-finite value in {what} for `{id}` at column {column}")]
    NonFinite {
        what: &'static str,
        id: String,
        column: usize,
    },

    #[error("inconsistent shape: {0}")]
    Shape(String),

    #[error("ragged embedding for `{id}`: expected dim {expected}, found {found}")]
    RaggedEmbedding { id: String, expected: usize, found: usize },

    #[error("zero variance in column {column} (`{name}`) over split `{split}`")]
    ZeroVariance { column: usize, name: String, split: String },

    #[error("unknown {what} `{id}`")]
    NotFound { what: &'static str, id: String },

    #[error("missing embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient history: need {needed} examples, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("client transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },

    #[error("client protocol error: {0}")]
    Protocol(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short machine-readable category, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Schema { .. } => "schema",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::NonFinite { .. } => "non_finite",
            Error::Shape(_) => "shape",
            Error::RaggedEmbedding { .. } => "ragged_embedding",
            Error::ZeroVariance { .. } => "zero_variance",
            Error::NotFound { .. } => "not_found",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::ZeroVector(_) => "zero_vector",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::Transport { .. } => "transport",
            Error::Protocol(_) => "protocol",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
