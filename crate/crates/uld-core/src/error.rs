//! Error type shared by every module in the crate.

use alloc::string::String;
use core::fmt;

/// Errors produced by the distillation toolkit.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied parameter is out of range or inconsistent
    /// (non-positive temperature, shape mismatch, overlong prefix, ...).
    InvalidParameter(String),
    /// Input data violates a precondition (non-finite logit, unnormalized
    /// mass, ...).
    InvalidInput(String),
    /// Two distributions that must share a support have different ones.
    /// This is the error that makes KL distillation impossible across
    /// tokenizers.
    SupportMismatch { left: usize, right: usize },
    /// The teacher puts probability mass where the student has exactly
    /// zero, so `q * ln(q/p)` is undefined.
    AbsoluteContinuity { index: usize },
    /// An input is too small or empty to be meaningful.
    DegenerateInput(String),
    /// The requested problem size exceeds what the operation supports.
    ScaleLimit { n: usize, max: usize },
    /// A checkpoint byte stream is malformed; `field` names the offending
    /// part of the format.
    Format { field: &'static str, detail: String },
}

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }

    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::SupportMismatch { left, right } => write!(
                f,
                "support mismatch: distributions have {left} and {right} entries"
            ),
            Error::AbsoluteContinuity { index } => write!(
                f,
                "absolute continuity violated: teacher mass at index {index} \
                 where student probability is zero"
            ),
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::ScaleLimit { n, max } => {
                write!(f, "problem size {n} exceeds supported limit {max}")
            }
            Error::Format { field, detail } => {
                write!(f, "checkpoint format error in {field}: {detail}")
            }
        }
    }
}

impl core::error::Error for Error {}
