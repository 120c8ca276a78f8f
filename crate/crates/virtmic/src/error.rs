//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {context} (index {index}, limit {limit})")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("insufficient samples: need {needed}, have {available} ({context})")]
    InsufficientSamples {
        context: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("length mismatch: {context} (left {left}, right {right})")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("singular system: {context} (condition number {condition:.3e})")]
    Singular {
        context: &'static str,
        condition: f64,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("divergence: parameter norm {norm:.3e} exceeded guard {guard:.1e}")]
    Divergence { norm: f64, guard: f64 },

    #[error("zero-norm reference matrix in normalized error")]
    ZeroNormReference,

    #[error("invalid configuration: field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }

    pub fn dims(context: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
