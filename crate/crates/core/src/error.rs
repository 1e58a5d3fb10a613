//! Error type shared by every module of the library.

use thiserror::Error;

/// Errors produced by construction, validation, and solver routines.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A numeric argument is outside its admissible domain (non-finite input,
    /// non-positive step count, probability mass that does not normalize, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a shape (grid, dimension, atom count,
    /// block partition) do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A time value was required to sit exactly on a grid node and does not.
    #[error("grid alignment error: {0}")]
    Alignment(String),

    /// Structural validation failed (asymmetric weight matrix, malformed CSV,
    /// inconsistent measure masses, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An input exceeds a hard resource cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// The integrator produced a non-finite state component.
    #[error("solver divergence at step {step} (t = {t:.6}): {detail}")]
    Divergence { step: usize, t: f64, detail: String },

    /// A memory kernel returned a non-finite value for a specific pair.
    #[error("kernel returned non-finite value at step {step} for pair ({row}, {col})")]
    KernelValue { step: usize, row: usize, col: usize },

    /// Fixed-point iteration failed to contract within the iteration budget.
    /// The defect sequence observed so far is attached.
    #[error("no convergence after {iterations} iterations (last defect {last:.3e})", last = .defects.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { iterations: usize, defects: Vec<f64> },

    /// Filesystem / serialization failure while writing or reading artifacts.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}

pub type CoreResult<T> = Result<T, CoreError>;
