use std::fmt;

use collab_core::Error as CoreError;

/// Failure of a CLI action, classified by the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad config, missing file, malformed artifact (exit 2).
    Validation(String),
    /// A verification check did not hold (exit 3).
    CheckFailed(String),
    /// Anything else (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::CheckFailed(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }

    /// Prefixes the message with where it happened.
    pub fn context(self, ctx: impl fmt::Display) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{ctx}: {m}")),
            CliError::CheckFailed(m) => CliError::CheckFailed(format!("{ctx}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{ctx}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::LengthMismatch { .. }
            | CoreError::DimensionMismatch { .. }
            | CoreError::InvalidInput(_)
            | CoreError::InconsistentHistory(_)
            | CoreError::Malformed(_)
            | CoreError::Json(_)
            | CoreError::Io(_) => CliError::Validation(e.to_string()),
            CoreError::Protocol { ref source, .. } => match CliError::from_ref(source) {
                CliError::Validation(_) => CliError::Validation(e.to_string()),
                _ => CliError::Runtime(e.to_string()),
            },
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl CliError {
    fn from_ref(e: &CoreError) -> Self {
        match e {
            CoreError::UpdateWithoutPredict
            | CoreError::NoJointImprovement(_)
            | CoreError::Internal(_) => CliError::Runtime(String::new()),
            _ => CliError::Validation(String::new()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
