use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("image {image_id} cannot be synthesized: {reason}")]
    NotSynthesizable { image_id: String, reason: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("placement failed for image index {image_index} after {attempts} attempts")]
    Placement { image_index: usize, attempts: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error at step {step}: {message}")]
    Numeric { step: usize, message: String },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged {
        step: usize,
        loss: f64,
        history: Vec<f64>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from invalid input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Validation(_)
                | Error::Domain(_)
                | Error::Config(_)
                | Error::Shape(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
