use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GlasError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GlasError {
    #[error("instance infeasible: {0}")]
    InstanceInfeasible(String),

    #[error("instance unsolved: {0}")]
    InstanceUnsolved(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("safety set violated: h = {h} (distance {distance} m)")]
    SafetyViolation { h: f64, distance: f64 },

    #[error("barrier singularity: distance {distance} m is within {tolerance} of r_safe")]
    Singularity { distance: f64, tolerance: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("non-finite loss {loss} in batch {batch} (epoch {epoch})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("non-finite state for robot {robot} at t = {t}")]
    NonFiniteState { robot: usize, t: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl GlasError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GlasError::Io {
            path: path.into(),
            source,
        }
    }
}
