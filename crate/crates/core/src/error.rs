use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AimsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AimsError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("infeasible scene profile `{profile}`: {reason}")]
    InfeasibleProfile { profile: String, reason: String },

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("prompt unavailable: {0}")]
    PromptUnavailable(String),

    #[error("empty prompt mask")]
    EmptyPrompt,

    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),

    #[error("malformed run-length encoding at byte {offset}: {reason}")]
    Rle { offset: usize, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step} (sample {sample}): {detail}")]
    NonFiniteLoss { step: usize, sample: String, detail: String },

    #[error("invalid selection: {0}")]
    InvalidSelection(String),

    #[error("image decoding failed: {0}")]
    Image(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl AimsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AimsError::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        AimsError::Json { path: path.into(), source }
    }
}
