use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
///
/// The variants are grouped so that a command-line front end can map them onto
/// exit codes: parameter problems, data/format problems and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("coordinate ({row}, {col}) outside {height}x{width} frame")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("pipeline step {index} ({kind}): {source}")]
    Step {
        index: usize,
        kind: String,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parameter,
    Data,
    Numeric,
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn mismatch(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Attach a file path to an error.
    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidDimension(_)
            | Error::OutOfBounds { .. }
            | Error::DimensionMismatch(_)
            | Error::Parameter(_) => ErrorClass::Parameter,
            Error::Step { source, .. } | Error::File { source, .. } => source.class(),
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => ErrorClass::Parameter,
            Error::Image(image::ImageError::IoError(e)) if e.kind() == std::io::ErrorKind::NotFound => {
                ErrorClass::Parameter
            }
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Format(_) | Error::Io(_) | Error::Image(_) | Error::Json(_) | Error::Csv(_) => {
                ErrorClass::Data
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes() {
        let missing = Error::from(std::io::Error::from(std::io::ErrorKind::NotFound)).at_path("p.json");
        assert_eq!(missing.class(), ErrorClass::Parameter);
        assert!(missing.to_string().starts_with("p.json"));
        let step = Error::Step {
            index: 2,
            kind: "crop".into(),
            source: Box::new(Error::numeric("x")),
        };
        assert_eq!(step.class(), ErrorClass::Numeric);
        assert_eq!(Error::format("bad").class(), ErrorClass::Data);
    }
}
