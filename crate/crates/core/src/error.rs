use thiserror::Error;

/// Errors raised by the library layer. The runner maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transition matrix: {0}")]
    InvalidMatrix(String),

    #[error("chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("every emission density vanishes at observation {index} (x = {value})")]
    ZeroLikelihood { index: usize, value: f64 },

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("conditioning event has zero probability")]
    EmptyConditioningEvent,

    #[error("exact evaluation supports at most {max} events, got {k}")]
    TooManyEventsForExact { k: usize, max: usize },

    #[error("gap length m = {m} must be smaller than block length k = {k}")]
    GapExceedsBlock { m: usize, k: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
