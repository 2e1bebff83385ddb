//! Pipeline error type with process exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] mmfuse_core::CoreError),
    #[error("format error: {0}")]
    Format(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Toml(String),
}

impl PipelineError {
    pub fn format(msg: impl Into<String>) -> Self {
        PipelineError::Format(msg.into())
    }

    pub fn consistency(msg: impl Into<String>) -> Self {
        PipelineError::Consistency(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        PipelineError::Usage(msg.into())
    }

    /// Process exit code: 2 usage, 3 contract violation, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use mmfuse_core::CoreError;
        match self {
            PipelineError::Usage(_) => 2,
            PipelineError::Core(CoreError::Numeric(_)) => 4,
            _ => 3,
        }
    }
}
