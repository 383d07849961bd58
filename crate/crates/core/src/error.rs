use thiserror::Error;

use crate::nlsolver::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("q[{index}][{index}] must be strictly negative and finite")]
    DiagonalNotNegative { index: usize },
    #[error("off-diagonal rate q[{row}][{col}] must be strictly positive")]
    OffDiagonalNotPositive { row: usize, col: usize },
    #[error("row {row} sums to {sum:e} > 0")]
    RowSumPositive { row: usize, sum: f64 },
    #[error("row {row} of a conservative generator sums to {sum:e}")]
    NotConservative { row: usize, sum: f64 },
    #[error("entry {index} is not finite")]
    NotFinite { index: usize },
    #[error("expected length {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {min} states, found {found}")]
    TooFewStates { min: usize, found: usize },
    #[error("entry {index} = {value:e} must be strictly positive")]
    NotPositive { index: usize, value: f64 },
    #[error("not a probability vector: {reason}")]
    NotProbability { reason: String },
    #[error("measure has no mass at state {index}; a full-support measure is required")]
    MuNotFullSupport { index: usize },
    #[error("state index {index} out of range for {n} states")]
    StateOutOfRange { index: usize, n: usize },
    #[error("time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix exponential overflow: {0}")]
    Overflow(String),
    #[error("singular linear system in {0}")]
    Singular(&'static str),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("nonlinear solve did not converge (best residual {:e})", .0.residual_inf)]
    SolverNotConverged(Box<SolveReport>),
    #[error("malformed path: {0}")]
    MalformedPath(String),
    #[error("time {t} exceeds simulated horizon {horizon}")]
    HorizonExceeded { t: f64, horizon: f64 },
}

impl Error {
    /// True for errors caused by a numerical method failing to reach its tolerance.
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. } | Error::SolverNotConverged(_) | Error::Singular(_)
        )
    }
}
