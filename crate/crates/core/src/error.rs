use std::io;

/// Errors produced anywhere in the runtime.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor extent did not match what the operation expects.
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: String,
        expected: usize,
        actual: usize,
    },

    /// An inconsistent layer or operator configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A learned or user-supplied parameter is outside its domain.
    #[error("parameter out of domain: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    /// Audio that cannot be featurized without resampling.
    #[error("sample rate {0} Hz is not supported; resample to 16000 Hz first")]
    SampleRate(u32),

    #[error("invalid audio: {0}")]
    Audio(String),

    /// Malformed or corrupted serialized data.
    #[error("format error: {0}")]
    Format(String),

    /// A weight bundle record is missing, unexpected, or mis-shaped.
    #[error("layer {layer}: {reason}")]
    Layer { layer: String, reason: String },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            axis: axis.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn layer(layer: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Layer {
            layer: layer.into(),
            reason: reason.into(),
        }
    }
}
