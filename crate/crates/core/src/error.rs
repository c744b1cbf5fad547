use num_complex::Complex64;
use thiserror::Error;

use crate::evolution::StepReport;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, Error)]
pub enum GarnierError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("pole hit in {context} at index ({i}, {j})")]
    Pole {
        context: &'static str,
        i: usize,
        j: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("ill-conditioned system (condition {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("degenerate kernel in {context}: singular-value gap {gap:.3e}")]
    Degenerate { context: &'static str, gap: f64 },

    #[error("zero extraction failed: found {found} zeros, expected {expected}")]
    Extraction { found: usize, expected: usize },

    #[error("parameter inconsistency: {0}")]
    Inconsistent(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("pole proximity at z = {z}")]
    PoleProximity { z: Complex64 },

    #[error("step rejected: max residual {max_residual:.3e}")]
    StepRejected {
        max_residual: f64,
        report: Box<StepReport>,
    },

    #[error("step {step} failed: {source}")]
    Trajectory {
        step: usize,
        #[source]
        source: Box<GarnierError>,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, GarnierError>;

impl GarnierError {
    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            GarnierError::Validation(_)
            | GarnierError::Domain(_)
            | GarnierError::Inconsistent(_)
            | GarnierError::Parse { .. }
            | GarnierError::Io(_) => 2,
            GarnierError::StepRejected { .. } => 4,
            GarnierError::Trajectory { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
