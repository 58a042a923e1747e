use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// One entry per violated invariant, so a caller can report all of them at once.
    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("orthonormalization failed after {attempts} draws ({rows}x{cols} frame)")]
    RankDeficient { rows: usize, cols: usize, attempts: usize },

    #[error("coupling matrix does not decompose: relative residual {residual:.3e}")]
    NonDecomposable { residual: f64 },

    #[error("propagator is singular at E = {energy}: relative residual {residual:.3e}")]
    SingularPropagator { energy: f64, residual: f64 },

    #[error("transition-space propagator is singular at E = {energy}")]
    SingularAtEnergy { energy: f64 },

    #[error("complex symmetric matrix is defective: bilinear norm {norm:.3e} of eigenvector {index}")]
    DefectiveMatrix { index: usize, norm: f64 },

    #[error("eigensolver did not converge")]
    EigenSolver,

    #[error("{skipped} of {total} realizations were skipped (limit is 1%)")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
