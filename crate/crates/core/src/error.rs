use thiserror::Error;

/// Errors raised by grid construction, problem validation, solves and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ellipticity violated: {0}")]
    Ellipticity(String),

    #[error("field is flagged as blown up")]
    BlownUpField,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("regime condition not satisfied: {0}")]
    Regime(String),

    #[error("linear solver did not converge at step {step}: {iterations} iterations, relative residual {residual:.3e}")]
    LinearSolve { step: usize, iterations: usize, residual: f64 },

    #[error("blow-up suspected at t = {time}: {reason}")]
    BlowUp { time: f64, reason: String },

    #[error("too few samples: need {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
