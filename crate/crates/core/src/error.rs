use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    ShortInput { needed: usize, got: usize },

    #[error("training diverged ({phase}) at epoch {epoch}")]
    Divergence { phase: String, epoch: usize },

    #[error("gradient check failed at parameter {index}: {reason}")]
    GradCheck { index: usize, reason: String },

    #[error("missing prerequisite: run stage `{stage}` first ({detail})")]
    Dependency { stage: String, detail: String },

    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
