//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("embedding index {index} out of range for table with {rows} rows")]
    EmbedIndex { index: usize, rows: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid token {token} for vocab size {vocab}")]
    InvalidToken { token: usize, vocab: usize },
    #[error("parameter layout mismatch: expected `{expected}`, got `{got}`")]
    LayoutMismatch { expected: String, got: String },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("training diverged at step {step}: {what}")]
    Divergence { step: usize, what: String },
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("task construction: {0}")]
    TaskConstruction(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
