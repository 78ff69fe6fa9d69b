use thiserror::Error;

use crate::trace::TraceRecord;

/// Errors produced by the separation toolkit.
#[derive(Debug, Error)]
pub enum BssError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("signal too short: window length {window} exceeds signal length {length}")]
    SignalTooShort { window: usize, length: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("observations are identically zero")]
    ZeroObservations,

    #[error("reference signal {index} is identically zero")]
    ZeroReference { index: usize },

    #[error("references are linearly dependent")]
    DependentReferences,

    #[error("solver diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        partial_trace: Vec<TraceRecord>,
    },

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedWav(String),

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BssError>;
