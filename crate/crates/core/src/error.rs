//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VdeError {
    #[error("dimension mismatch: {context} ({a_h}x{a_w} vs {b_h}x{b_w})")]
    DimensionMismatch {
        context: &'static str,
        a_h: usize,
        a_w: usize,
        b_h: usize,
        b_w: usize,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl VdeError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        VdeError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        VdeError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, VdeError>;
