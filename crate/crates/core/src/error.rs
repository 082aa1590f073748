use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("config: {0}")]
    Config(String),

    #[error("point behind camera (Z = {z})")]
    BehindCamera { z: f64 },

    #[error("degenerate bone {bone}: zero length")]
    DegenerateBone { bone: usize },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("ingestion failed for sequence {sequence}: {reason}")]
    Ingestion { sequence: String, reason: String },

    #[error("training diverged at epoch {epoch}, step {step}: {component} is not finite")]
    Divergence {
        epoch: usize,
        step: usize,
        component: String,
    },

    #[error("gradient check failed: max relative error {max_rel_error:.3e} over {offending} parameters")]
    GradientCheck {
        max_rel_error: f64,
        offending: usize,
    },

    #[error("internal: {0}")]
    Internal(String),

    #[error("format: {0}")]
    Format(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::BehindCamera { .. } => "behind_camera",
            Error::DegenerateBone { .. } => "degenerate_bone",
            Error::IncompatibleCheckpoint(_) => "incompatible_checkpoint",
            Error::Ingestion { .. } => "ingestion",
            Error::Divergence { .. } => "divergence",
            Error::GradientCheck { .. } => "gradient_check",
            Error::Internal(_) => "internal",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
