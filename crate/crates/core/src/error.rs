use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path} (frame index {index}): {message}")]
    Image {
        path: PathBuf,
        index: usize,
        message: String,
    },

    #[error("frame index {index} out of bounds for clip {clip_id} with {len} frames")]
    FrameBounds {
        clip_id: String,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed embedding file: {0}")]
    Vdem(String),

    #[error("provider error: {0}")]
    Provider(#[from] ProviderError),

    #[error("stage failure in {stage}: {message}")]
    Stage { stage: &'static str, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures from a model provider call.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("empty prompt")]
    EmptyPrompt,

    #[error("request carries no images or videos")]
    NoVisualInput,

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("rate limited (retry after {retry_after_ms} ms)")]
    RateLimited { retry_after_ms: u64 },

    #[error("could not parse json after {attempts} attempts; last reply: {last_reply}")]
    Parse { attempts: u32, last_reply: String },

    #[error("no scripted response for request: {0}")]
    Unscripted(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
