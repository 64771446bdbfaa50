use dprandp_privacy::PrivacyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("privacy budget exceeded: accounted epsilon {closed} > allowed {allowed}")]
    Budget { closed: f64, allowed: f64 },

    #[error(transparent)]
    Privacy(#[from] PrivacyError),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Shape(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Config(msg.into()))
}
