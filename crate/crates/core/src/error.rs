use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite coordinate {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("malformed Fourier table at line {line}: {reason}")]
    FourierFormat { line: usize, reason: String },

    #[error("ensemble has no recorded momenta")]
    MissingMomenta,

    #[error("time {time} is not a point of the output grid")]
    OffGrid { time: f64 },

    #[error("ensemble grids do not match: {0}")]
    GridMismatch(String),

    #[error("requested ensemble needs {requested} bytes, limit is {limit}")]
    ResourceLimit { requested: u128, limit: u128 },

    #[error("generator identity violated: direct {direct}, closed form {closed}")]
    IdentityViolation { direct: f64, closed: f64 },

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Validation failures map to exit code 2, everything else to 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidParameter { .. }
                | Error::FourierFormat { .. }
                | Error::DimensionMismatch { .. }
                | Error::NonFinite { .. }
        )
    }
}
