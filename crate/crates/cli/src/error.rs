use std::fmt;

use dprandp_core::CoreError;
use dprandp_privacy::PrivacyError;

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad or unreadable configuration.
    Usage(String),
    /// A run would exceed its privacy budget.
    Budget(String),
    /// Non-finite training or an accounting computation that cannot finish.
    Numerical(String),
    /// Any other I/O failure.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("error", m),
            CliError::Budget(m) => ("budget violation", m),
            CliError::Numerical(m) => ("numerical failure", m),
            CliError::Io(m) => ("i/o error", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl From<PrivacyError> for CliError {
    fn from(e: PrivacyError) -> Self {
        match e {
            PrivacyError::Domain(_) | PrivacyError::CalibrationFailed { .. } => CliError::Usage(e.to_string()),
            PrivacyError::GridOverflow { .. } | PrivacyError::DeltaUnreachable { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Budget { .. } => CliError::Budget(e.to_string()),
            CoreError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            CoreError::Privacy(p) => p.into(),
            CoreError::Io(_) => CliError::Io(e.to_string()),
            CoreError::Shape(_) | CoreError::Config(_) | CoreError::Format(_) | CoreError::Json(_) => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let budget: CliError = CoreError::Budget { closed: 1.2, allowed: 1.0 }.into();
        assert_eq!(budget.exit_code(), 3);
        let nan: CliError = CoreError::NonFinite { step: 4 }.into();
        assert_eq!(nan.exit_code(), 4);
        let cfg: CliError = CoreError::Config("x".into()).into();
        assert_eq!(cfg.exit_code(), 2);
        let cal: CliError = PrivacyError::CalibrationFailed {
            epsilon: 1.0,
            delta: 1e-5,
            max_sigma: 100.0,
        }
        .into();
        assert_eq!(cal.exit_code(), 2);
        let grid: CliError = CoreError::Privacy(PrivacyError::GridOverflow { required: 9, limit: 1 }).into();
        assert_eq!(grid.exit_code(), 4);
    }
}
