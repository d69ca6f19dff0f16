use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("no frames found in {0}")]
    EmptyClip(PathBuf),

    #[error("cannot read frame {0}")]
    UnreadableFrame(String),

    #[error("frame {frame_b} has dimensions different from {frame_a}")]
    InconsistentDimensions { frame_a: String, frame_b: String },

    #[error("cannot write to {0}")]
    UnwritablePath(PathBuf),

    #[error("checkpoint was written for configuration {found}, active configuration is {expected}")]
    ConfigMismatch { expected: String, found: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("corrupt flow record: {0}")]
    CorruptFlow(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("flow backend failed: {0}")]
    BackendFailure(String),

    #[error("external decoder failed: {0}")]
    Decoder(String),

    #[error("non-finite loss at step {step}: {report}")]
    NonFiniteLoss { step: usize, report: String },

    #[error("temporal state advanced out of order: expected frame {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("plugin failed: {0}")]
    Plugin(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
