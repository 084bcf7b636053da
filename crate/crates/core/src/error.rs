use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invariant violated: {0}")]
    Invariant(#[from] Violation),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("format error: {0}")]
    Format(#[from] FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image codec error: {0}")]
    Codec(String),
}

impl From<image::ImageError> for Error {
    fn from(err: image::ImageError) -> Self {
        match err {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Codec(other.to_string()),
        }
    }
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// Errors raised while decoding one of the binary containers.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated {container} data: needed {needed} bytes, {available} available")]
    Truncated {
        container: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("unsupported {container} version {found} (expected {expected})")]
    VersionMismatch {
        container: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("malformed {container} header: {reason}")]
    Malformed {
        container: &'static str,
        reason: String,
    },
}

/// Where an invariant failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Whole,
    Sample(usize),
    Tap {
        basis: usize,
        row: usize,
        col: usize,
    },
    Kernel(usize),
    Pixel {
        row: usize,
        col: usize,
    },
    Coefficient {
        basis: usize,
        row: usize,
        col: usize,
    },
    Label(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Whole => write!(f, "(whole object)"),
            Location::Sample(i) => write!(f, "sample {i}"),
            Location::Tap { basis, row, col } => write!(f, "kernel {basis} tap ({row}, {col})"),
            Location::Kernel(b) => write!(f, "kernel {b}"),
            Location::Pixel { row, col } => write!(f, "pixel ({row}, {col})"),
            Location::Coefficient { basis, row, col } => {
                write!(f, "coefficient plane {basis} at pixel ({row}, {col})")
            }
            Location::Label(s) => write!(f, "label {s}"),
        }
    }
}

/// First violated invariant of a validated type.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{subject}: {rule} at {location}")]
pub struct Violation {
    pub subject: &'static str,
    pub rule: String,
    pub location: Location,
}

impl Violation {
    pub fn new(subject: &'static str, rule: impl Into<String>, location: Location) -> Self {
        Self {
            subject,
            rule: rule.into(),
            location,
        }
    }
}

/// Types with checkable invariants.
pub trait Validate {
    /// Reports the first violated invariant, scanning in storage order.
    fn validate(&self) -> Result<(), Violation>;
}
