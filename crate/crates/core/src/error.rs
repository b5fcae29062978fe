use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the acoustic field pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("XML parse error at line {line}: {message}")]
    Parse { line: u32, message: String },

    #[error("schema error for {item}: {message}")]
    Schema { item: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("unsupported audio format: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("frame {index}: {message}")]
    Frame { index: usize, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("scene error: {0}")]
    Scene(String),

    #[error("JSON error at {path}: {message}")]
    Json { path: String, message: String },

    #[error("packaging error: {0}")]
    Packaging(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration or input validation, as
    /// opposed to failures while processing valid input.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema { .. }
                | Error::Validation(_)
                | Error::Argument(_)
                | Error::Json { .. }
                | Error::Scene(_)
                | Error::Packaging(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
