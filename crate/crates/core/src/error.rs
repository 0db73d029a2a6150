use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or tensor shape is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A named configuration field failed validation or parsing.
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },

    /// An API was called with arguments outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("degenerate motion: |t| = {norm:e}")]
    DegenerateMotion { norm: f64 },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("point at infinity")]
    PointAtInfinity,

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Field {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Field { .. } => "config",
            Error::Usage(_) => "usage",
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => "numerical",
            Error::DegenerateMotion { .. } | Error::Degenerate(_) => "degenerate",
            Error::PointAtInfinity => "point-at-infinity",
            Error::Evaluation(_) => "evaluation",
            Error::Format(_) => "format",
            Error::MissingFile(_) => "missing-file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
