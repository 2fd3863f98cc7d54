use std::io;

/// Errors produced by the token-drop engine and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Array or lattice dimensions disagree with what the operation expects.
    #[error("input shape mismatch: {0}")]
    InputShape(String),

    /// Sample values that cannot be processed (NaN, infinities, out-of-range).
    #[error("invalid data: {0}")]
    Data(String),

    /// A configuration field holds a value outside its allowed range.
    #[error("invalid {field}: {reason}")]
    Config { field: &'static str, reason: String },

    /// Temporal steps were pushed out of order.
    #[error("step out of order: expected step {expected}, got {got}")]
    Sequence { expected: usize, got: usize },

    /// A serialized stream is malformed, truncated or inconsistent.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    /// Short stable name of the error class, used for exit codes and bindings.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InputShape(_) => "InputShapeError",
            Error::Data(_) => "DataError",
            Error::Config { .. } => "ConfigError",
            Error::Sequence { .. } => "SequenceError",
            Error::Format(_) => "FormatError",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
