//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("route too short: arclength {arclength:.3} m < spacing {spacing:.3} m")]
    RouteTooShort { arclength: f64, spacing: f64 },

    #[error("duplicate navigation vertices at index {0}")]
    DuplicateNavVertices(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid scene {id}: {reason}")]
    InvalidScene { id: String, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown parameter: {0}")]
    UnknownParam(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("scene id not found: {0}")]
    UnknownScene(String),

    #[error("data format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable tag for CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RouteTooShort { .. } => "route_too_short",
            Error::DuplicateNavVertices(_) => "duplicate_nav_vertices",
            Error::Shape(_) => "shape_mismatch",
            Error::Empty(_) => "empty_input",
            Error::NonFinite(_) => "non_finite",
            Error::Geometry(_) => "invalid_geometry",
            Error::InvalidScene { .. } => "invalid_scene",
            Error::Config(_) => "invalid_config",
            Error::UnknownParam(_) => "unknown_parameter",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::UnknownScene(_) => "unknown_scene",
            Error::Format(_) => "data_format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
