use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate embedding: pre-normalization norm {norm:e} below threshold")]
    DegenerateEmbedding { norm: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("rank-deficient input: {0}")]
    Rank(String),

    #[error(transparent)]
    Llm(#[from] crate::synthgen::llm::LlmError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(err: &serde_json::Error, line_offset: usize) -> Self {
        Error::Parse {
            line: err.line() + line_offset,
            column: err.column(),
            message: err.to_string(),
        }
    }
}
