use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("pixel {index} has value {value}, expected a probability in [0, 1]")]
    OutOfRange { index: usize, value: f32 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("degenerate raster dimensions {height}x{width}")]
    Degenerate { height: usize, width: usize },

    #[error("label {label} does not fit in a 16-bit PNG")]
    LabelOverflow { label: u32 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("scene is infeasible: {0}")]
    Infeasible(String),
}

impl From<png::DecodingError> for Error {
    fn from(err: png::DecodingError) -> Self {
        match err {
            png::DecodingError::IoError(e) => Error::Io(e),
            other => Error::Format(other.to_string()),
        }
    }
}

impl From<png::EncodingError> for Error {
    fn from(err: png::EncodingError) -> Self {
        match err {
            png::EncodingError::IoError(e) => Error::Io(e),
            other => Error::Format(other.to_string()),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            match err.into_kind() {
                csv::ErrorKind::Io(e) => Error::Io(e),
                _ => unreachable!(),
            }
        } else {
            Error::Format(err.to_string())
        }
    }
}

pub(crate) fn check_same_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
