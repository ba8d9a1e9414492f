use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("index {index} is out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("element {0} is already present")]
    DuplicateElement(usize),

    #[error("element {0} is not present")]
    MissingElement(usize),

    #[error("{what} is limited to n <= {limit}, got n = {n}")]
    SizeGuard { what: &'static str, limit: usize, n: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("weighted system is rank deficient in columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failures raised while talking to a model endpoint.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    /// The connection or child process failed. Safe to retry.
    #[error("transport failure: {0}")]
    Transport(String),

    #[error("model call timed out after {0:?}")]
    Timeout(Duration),

    #[error("malformed model response: {0}")]
    Malformed(String),

    #[error("model endpoint reported an error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Remote { status: Option<u16>, message: String },

    #[error("batch of {got} sequences exceeds batch_limit {limit}")]
    BatchLimit { limit: usize, got: usize },

    #[error("batch aborted: sequence {index} failed: {message}")]
    BatchItem { index: usize, message: String },

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },
}

impl GatewayError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}
