use std::fmt;

/// Errors raised while recording or differentiating a computation.
#[derive(Debug, Clone, PartialEq)]
pub enum AdError {
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    IndexOutOfRange {
        id: usize,
        size: usize,
    },
    EmptySequence {
        op: &'static str,
    },
    LabelOutOfRange {
        label: usize,
        classes: usize,
    },
    NonScalarRoot {
        shape: Vec<usize>,
    },
    BackwardTwice,
    TapeCleared,
    NoParameters,
    UnknownParameter(String),
    DuplicateParameter(String),
}

impl fmt::Display for AdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            AdError::InvalidShape { op, shape, reason } => {
                write!(f, "{op}: invalid shape {shape:?} ({reason})")
            }
            AdError::LengthMismatch { what, expected, actual } => {
                write!(f, "{what}: expected length {expected}, got {actual}")
            }
            AdError::IndexOutOfRange { id, size } => {
                write!(f, "index {id} out of range for table of {size} rows")
            }
            AdError::EmptySequence { op } => write!(f, "{op}: every position is masked"),
            AdError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            AdError::NonScalarRoot { shape } => {
                write!(f, "backward root must be a scalar, got shape {shape:?}")
            }
            AdError::BackwardTwice => {
                f.write_str("backward already ran on this tape; clear it before reuse")
            }
            AdError::TapeCleared => f.write_str("variable belongs to a cleared tape"),
            AdError::NoParameters => f.write_str("tape has no parameter store attached"),
            AdError::UnknownParameter(name) => write!(f, "unknown parameter {name:?}"),
            AdError::DuplicateParameter(name) => write!(f, "duplicate parameter {name:?}"),
        }
    }
}

impl std::error::Error for AdError {}

pub type Result<T> = std::result::Result<T, AdError>;
