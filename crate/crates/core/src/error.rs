//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failure modes of the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix field failed the positive-definiteness or spectral-bound check.
    #[error("ellipticity violated: {0}")]
    Ellipticity(String),

    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    Input(String),

    /// The requested problem size exceeds the configured storage bound.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A linear solve failed or was too ill-conditioned to trust.
    #[error("linear solver failed: {message} (condition estimate {condition:e})")]
    Solver { message: String, condition: f64 },

    /// An iterative method hit its iteration cap.
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A quantity required to be positive was not.
    #[error("positivity violated: {0}")]
    Positivity(String),

    /// A descent method diverged; the objective trace is attached.
    #[error("optimization failed: {message}")]
    Optimization { message: String, trace: Vec<f64> },

    /// Quadrature or lattice resolution too coarse for the requested accuracy.
    #[error("insufficient resolution: {0}")]
    Resolution(String),

    /// Energy-oracle answers are mutually inconsistent.
    #[error("oracle inconsistency: {0}")]
    OracleInconsistency(String),

    /// The reconstructed matrix is not admissible.
    #[error("reconstruction failed: {0}")]
    Reconstruction(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
