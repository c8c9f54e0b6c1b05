use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed call arguments (dimension mismatch, negative time, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// Parameters that are well-formed but outside the supported regime.
    #[error("unsupported parameters: {0}")]
    Unsupported(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo:e}, f(hi) = {f_hi:e}")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("trajectory {trajectory} diverged at step {step} (|y| = {norm:e})")]
    Diverged { trajectory: usize, step: usize, norm: f64 },

    #[error("problem size {n} exceeds the limit {limit}")]
    Size { n: usize, limit: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }
}
