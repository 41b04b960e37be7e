use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AenError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AenError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("model fingerprint mismatch: cache built for {expected:016x}, model is {found:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },

    #[error("non-finite value in batch {batch}: {what}")]
    NonFinite { batch: usize, what: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("HTTP status {status}: {body}")]
    HttpStatus { status: u16, body: String },

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AenError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        AenError::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        AenError::Format(msg.into())
    }

    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            AenError::Domain(_) => "domain",
            AenError::DimensionMismatch { .. } => "dimension_mismatch",
            AenError::Format(_) => "format",
            AenError::Schema { .. } => "schema",
            AenError::Unsupported(_) => "unsupported",
            AenError::FingerprintMismatch { .. } => "fingerprint_mismatch",
            AenError::NonFinite { .. } => "non_finite",
            AenError::Transport(_) => "transport",
            AenError::HttpStatus { .. } => "http_status",
            AenError::MalformedResponse(_) => "malformed_response",
            AenError::Config(_) => "config",
            AenError::Io(_) => "io",
            AenError::Json(_) => "json",
        }
    }
}
