//! Command implementations and the HTTP render/query service.

pub mod commands;
pub mod server;

use serde::Serialize;
use spcgs_core::Error;

/// Machine-readable error body shared by the CLI and the server.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub kind: &'static str,
    pub message: String,
}

impl ErrorBody {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": self })
    }
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        let kind = match e {
            Error::DegenerateRotation | Error::InvalidCamera(_) => "invalid_camera",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidScene(_) => "invalid_scene",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptyLayout => "empty_layout",
            Error::NotEnoughCameras(_) => "not_enough_cameras",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::UnknownQuery(_) => "unknown_query",
            Error::Generation(_) => "generation",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Image { .. } => "image",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<Error> for ErrorBody {
    fn from(e: Error) -> Self {
        (&e).into()
    }
}
