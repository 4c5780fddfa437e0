use thiserror::Error;

use crate::report::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0}; only 1, 2 and 3 are supported")]
    UnsupportedDimension(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} samples, got {got}")]
    SampleCountMismatch { expected: usize, got: usize },
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("field format: {0}")]
    FieldFormat(String),
    #[error("Neumann iteration does not contract (iteration {iterations}, relative residual {residual:.3e})")]
    NonContractive { iterations: usize, residual: f64 },
    #[error("average of the symbol is singular")]
    SingularAverage,
    #[error("resonant mode k = {k:?} (|k.omega| = {value:.3e})")]
    ResonantMode { k: Vec<i64>, value: f64 },
    #[error("field has nonzero mean {mean:.3e}")]
    NonzeroMean { mean: f64 },
    #[error("displacement too large: sup |d(displacement)| = {0:.3e} is not below 1")]
    DisplacementTooLarge(f64),
    #[error("Id + u is no longer a diffeomorphism: min(1 + u') = {0:.3e}")]
    DiffeomorphismLost(f64),
    #[error("degenerate embedding: smallest eigenvalue of du^T du is {0:.3e}")]
    DegenerateEmbedding(f64),
    #[error("average of the torsion matrix is singular")]
    SingularAvgS,
    #[error("average of Q is singular; twist mode requires it to be invertible")]
    SingularAvgQ,
    #[error("linear solve self-check failed: residual {residual:.3e} exceeds {bound:.3e}")]
    SelfCheckFailed { residual: f64, bound: f64 },
    #[error("no convergence after {} iterations", .0.rows.len())]
    MaxIterExceeded(Box<SolveReport>),
    #[error("RK4 step rejected: energy drift {0:.3e} exceeds 1e-6")]
    StepRejected(f64),
    #[error("non-evaluable nonlinearity: {0}")]
    NonEvaluable(String),
}

impl Error {
    /// Solver did not reach its fixed point, as opposed to invalid input or a
    /// broken invariant.
    pub fn is_non_convergence(&self) -> bool {
        matches!(
            self,
            Error::NonContractive { .. }
                | Error::MaxIterExceeded(_)
                | Error::DiffeomorphismLost(_)
                | Error::DegenerateEmbedding(_)
        )
    }
}
