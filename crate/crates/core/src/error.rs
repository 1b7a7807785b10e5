use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("matrix is singular (or z within {tol:e} of a pole) in {context}")]
    Singular { context: &'static str, tol: f64 },

    #[error("eigenvalue iteration did not converge: {sweeps} QR sweeps, trailing subdiagonal {residual:e}")]
    EigenNonConvergence { sweeps: usize, residual: f64 },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last residual {residual:e})")]
    IterationDiverged { iterations: usize, residual: f64 },

    #[error("(A,C) not detectable: A - L*C has spectral radius {radius}")]
    NotDetectable { radius: f64 },

    #[error("(A,B) not stabilizable: A + B*F has spectral radius {radius}")]
    NotStabilizable { radius: f64 },

    #[error("gain bank synthesis failed: only {found} of {requested} Schur pairs after {attempts} attempts")]
    GainBankSynthesis {
        found: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("covariance is not positive semidefinite: eigenvalue {eigenvalue:e}")]
    IndefiniteCovariance { eigenvalue: f64 },

    #[error("invariant zero computation unsupported: {reason}")]
    ZerosUnsupported { reason: String },

    #[error("Rosenbrock pencil is defective (singular for every tested shift); raw zero estimates: {zeros:?}")]
    DefectivePencil { zeros: Vec<(f64, f64)> },

    #[error("attack not constructible: {reason}")]
    AttackInfeasible { reason: String },

    #[error("schedule desync at step {got}: node expected step {expected}")]
    ScheduleDesync { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
