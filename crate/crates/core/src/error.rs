use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{n_spins} spins exceed the configured limit ({reason})")]
    CapExceeded { n_spins: usize, reason: String },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Krylov propagation did not converge (residual {residual:.3e} > tolerance {tolerance:.1e})")]
    NonConvergence { residual: f64, tolerance: f64 },
    #[error("phase grid is not uniform over [0, 2pi): {0}")]
    NonUniformPhaseGrid(String),
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("no feasible solution: {0}")]
    NoFeasibleSolution(String),
    #[error("distribution has no peaks above the prominence threshold")]
    NoPeaks,
    #[error("non-positive data at index {index}: {value}")]
    NonPositiveData { index: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
