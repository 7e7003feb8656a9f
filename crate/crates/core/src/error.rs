use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("alpha = {alpha} is outside the admissible interval ({lo}, {hi}) for p = {p}")]
    InadmissibleAlpha { alpha: f64, p: f64, lo: f64, hi: f64 },

    #[error("admissible alpha interval is empty for p = {0}; need p > 10")]
    EmptyAlphaRange(f64),

    #[error("non-finite or exploding value {value} at time step {step}")]
    BlowUp { step: usize, value: f64 },

    #[error("value overflows f64 (log-value {log_value}): {what}")]
    Overflow { what: String, log_value: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite statistic: {0}")]
    NonFinite(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
