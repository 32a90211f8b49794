use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dynamics are not stable: spectral radius {radius} >= 1")]
    StabilityViolation { radius: f64 },

    #[error("noise variances must be positive (q_s = {q_s}, q_e = {q_e})")]
    InvalidNoise { q_s: f64, q_e: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Lyapunov iteration did not converge within {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("encoder variance w'Σw = {0:e} is degenerate")]
    DegenerateVariance(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("no restart reached stationarity (best projected gradient {best_gradient:e})")]
    NoConvergence { best_gradient: f64 },

    #[error("cross-check failed: {0}")]
    CrossCheck(String),

    #[error("second derivative does not change sign on [{c_lo}, {c_hi}]")]
    NoSignChange { c_lo: f64, c_hi: f64 },

    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    #[error("GRU hidden state became non-finite")]
    HiddenStateOverflow,

    #[error("every evaluation point was degenerate ({excluded} excluded)")]
    AllDegenerate { excluded: usize },

    #[error("trajectory exceeded |x| > {limit:e} at step {step}")]
    TrajectoryBlowup { step: usize, limit: f64 },

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("invalid count: {0}")]
    InvalidCount(String),

    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),

    #[error("empty input")]
    EmptyInput,

    #[error("task failed: {0}")]
    TaskFailed(String),
}
