use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown axis code `{0}`")]
    UnknownAxis(String),

    #[error("frame too small: cell {cell_height}x{cell_width} cannot hold a {patch}x{patch} patch")]
    FrameTooSmall {
        cell_height: usize,
        cell_width: usize,
        patch: usize,
    },

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token sequence of length {len} exceeds the encoder context limit {limit}")]
    TokenOverflow { len: usize, limit: usize },

    #[error("empty token sequence")]
    EmptyTokens,

    #[error("zero vector in cosine similarity")]
    ZeroVector,

    #[error("constant input: correlation undefined")]
    ConstantInput,

    #[error("constant columns for axes {0:?}")]
    ConstantColumns(Vec<String>),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("no accepted opinion for video `{video}` on axis {axis}")]
    NoOpinion { video: String, axis: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("MOS value {0} outside [-1, 1]")]
    MosOutOfRange(f64),

    #[error("every axis in the batch has constant targets")]
    DegenerateBatch,

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("no cached features for `{0}`")]
    CacheMiss(String),

    #[error("backbone error: {0}")]
    Backbone(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("malformed record in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
