use thiserror::Error;

use crate::walk::WalkRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidSpec(String),

    #[error("environment is outside the sub-diffusive null-recurrent regime: {0}")]
    InvalidRegime(String),

    #[error("two-point calibration has no solution: {0}")]
    Infeasible(String),

    #[error("arena node budget of {capacity} exceeded")]
    ArenaCapacity { capacity: usize },

    #[error("step budget of {budget} exhausted after {} completed returns", .partial.return_times.len())]
    BudgetExhausted { budget: u64, partial: Box<WalkRecord> },

    #[error("truncation too shallow: gap {gap:.3e} exceeds tolerance {tolerance:.3e}")]
    TruncationTooShallow { gap: f64, tolerance: f64 },

    #[error("Abel tail mass {tail:.3e} beyond the last horizon exceeds {limit:.3e} of the sum")]
    TailMassTooLarge { tail: f64, limit: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last means {last_means:?})")]
    NoConvergence { iterations: usize, last_means: Vec<f64> },

    #[error("degenerate tail: {0}")]
    DegenerateTail(String),

    #[error("tail constant c_M is required when kappa <= 2")]
    MissingTailConstant,

    #[error("degenerate regression window: {0}")]
    DegenerateWindow(String),

    #[error("too few exceedances for a tail estimate: {0}")]
    TooFewExceedances(String),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("claim registry: {0}")]
    Registry(String),

    #[error("unknown claim id `{0}`")]
    UnknownClaim(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the input (spec, regime, claim id, configuration)
    /// rather than by a failed computation.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidRegime(_)
                | Error::Infeasible(_)
                | Error::MissingTailConstant
                | Error::RegimeMismatch(_)
                | Error::UnknownClaim(_)
                | Error::Registry(_)
                | Error::Precondition(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
