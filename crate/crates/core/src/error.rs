use thiserror::Error;

#[derive(Debug, Error)]
pub enum LwError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("Gibbs integral diverges: {0}")]
    DivergenceDetected(String),

    #[error(
        "integration budget exceeded after {evals} evaluations (relative error {achieved:.3e}, target {target:.3e})"
    )]
    BudgetExceeded { evals: u64, achieved: f64, target: f64 },

    #[error("Newton inversion did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("line search could not keep A inside dom Omega")]
    LeftDomain,

    #[error("series extraction unstable: fit residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    ExtractionUnstable { residual: f64, tolerance: f64 },

    #[error("Dyson iteration exceeded {0} iterations")]
    MaxIterExceeded(usize),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LwError>;
