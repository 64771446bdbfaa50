use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("privacy loss grid needs {required} points but the limit is {limit}; use a coarser grid")]
    GridOverflow { required: usize, limit: usize },

    #[error("delta {delta:e} is unreachable: {truncated:e} of the loss mass is truncated to +inf")]
    DeltaUnreachable { delta: f64, truncated: f64 },

    #[error("no noise multiplier up to {max_sigma} reaches epsilon {epsilon} at delta {delta:e}")]
    CalibrationFailed {
        epsilon: f64,
        delta: f64,
        max_sigma: f64,
    },
}

pub type Result<T> = std::result::Result<T, PrivacyError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(PrivacyError::Domain(msg.into()))
}
