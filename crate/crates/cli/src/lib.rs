//! Experiment harness for particle systems on co-evolving networks.
//!
//! The library half of the `coevolve` binary: TOML experiment configs, a
//! deterministic artifact pipeline (CSV / JSON / SVG plus a hashed run
//! manifest), convergence studies against mean-field references, and a
//! quantitative stability-bound verification suite.

pub mod config;
pub mod manifest;
pub mod runner;
pub mod study;
pub mod svg;
pub mod verify;

use coevolve_core::CoreError;

/// Process exit code for configuration, validation, and I/O failures.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for solver divergence or non-convergence.
pub const EXIT_SOLVER: i32 = 3;
/// Process exit code for a violated stability bound.
pub const EXIT_BOUND: i32 = 4;

/// Harness error, bucketed by process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad config, bad CLI input, bad data file, or failed I/O.
    Config(String),
    /// The integrator diverged or an iteration failed to converge.
    Solver(String),
    /// A verified stability bound was violated.
    BoundViolation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::BoundViolation(_) => EXIT_BOUND,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::BoundViolation(m) => write!(f, "bound violation: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Divergence { .. }
            | CoreError::KernelValue { .. }
            | CoreError::NoConvergence { .. } => CliError::Solver(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
