//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape disagreement, with a description of both sides.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller-supplied value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Bad or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A function handed to the gradient checker returned different values
    /// on repeated evaluation.
    #[error("non-deterministic function: {0}")]
    NonDeterministic(String),

    /// Dataset synthesis or loading failure.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Dataset synthesis produced no usable pairs.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// Training was aborted (non-finite loss); the message names the
    /// diagnostic snapshot when one was written.
    #[error("training aborted: {0}")]
    TrainAbort(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Checkpoint load failures, split by kind so callers can react differently
/// to a foreign file vs. a stale one vs. a config mismatch.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    NotACheckpoint,

    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("parameter `{name}`: shape mismatch (checkpoint {found:?}, model {expected:?})")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("checkpoint is missing parameter record `{0}`")]
    MissingRecord(String),

    #[error("malformed checkpoint header: {0}")]
    Header(String),
}
