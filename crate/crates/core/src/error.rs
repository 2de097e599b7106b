use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid feature: {0}")]
    InvalidFeature(String),

    #[error("missing feature: {0}")]
    MissingFeature(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown speaker id {id} (table has {size} entries)")]
    UnknownSpeaker { id: usize, size: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid label {label} (expected < {classes})")]
    InvalidLabel { label: usize, classes: usize },

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("missing model: {0}")]
    MissingModel(String),

    #[error("training diverged at step {step}: {report}")]
    Divergence { step: usize, report: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
