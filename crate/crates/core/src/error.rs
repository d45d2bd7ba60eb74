use alloc::string::String;
use thiserror::Error;

/// Errors raised by model construction, simulation, identification and analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model is not stable: max real part of eigenvalues is {0}")]
    Unstable(f64),

    #[error("non-uniform timestamps at sample {index}")]
    NonUniformTimestamps { index: usize },

    #[error("signal too short: need at least {required} samples, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("aliasing: component at {frequency_hz} Hz is not below the Nyquist frequency {nyquist_hz} Hz")]
    Aliasing { frequency_hz: f64, nyquist_hz: f64 },

    #[error("degenerate signal: {0}")]
    Degenerate(String),

    #[error("rank-deficient identification problem: {0}")]
    RankDeficient(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
