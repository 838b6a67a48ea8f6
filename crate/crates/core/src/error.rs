use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed input row. `line` is 1-based and counts the header.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("dataset empty after filtering")]
    EmptyDataset,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("state error: {0}")]
    State(String),

    #[error("diffusion sampling diverged at step {0}")]
    SamplingDiverged(usize),

    #[error("training diverged at step {step}: {component} loss is not finite")]
    Diverged { step: usize, component: String },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the failure is the caller's fault (bad flags, bad config) as
    /// opposed to something that went wrong while running.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
