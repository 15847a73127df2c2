use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("unknown stream purpose `{0}`")]
    UnknownPurpose(String),

    #[error("adversarial crafting failed for target {target}: best margin {best_margin:.4} after {iters} iterations")]
    NaeFailed { target: usize, best_margin: f32, iters: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("metadata mismatch: {0}")]
    Metadata(String),

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("checkpoint integrity: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
