use thiserror::Error;

/// Errors raised by the library. Every variant carries enough context to
/// locate the offending input without re-running.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("update called without a preceding predict")]
    UpdateWithoutPredict,

    #[error("no joint improvement over the best constant (gamma = {0})")]
    NoJointImprovement(f64),

    #[error("inconsistent history: {0}")]
    InconsistentHistory(String),

    #[error("day {day}, round {round}: {source}")]
    Protocol {
        day: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed transcript: {0}")]
    Malformed(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn check_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { what, left, right });
    }
    Ok(())
}
