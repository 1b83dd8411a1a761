use thiserror::Error;

use crate::inclusion::ScheduleViolation;
use crate::lstd::ConfigViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("step schedule rejected: {0}")]
    Schedule(#[from] ScheduleViolation),

    #[error("solver configuration rejected: {0}")]
    Config(#[from] ConfigViolation),

    #[error("non-finite value produced at iteration {iteration}; the iteration diverged or the problem is badly conditioned")]
    NonFinite { iteration: usize },

    #[error("degenerate features: every Gram eigenvalue is below the rank tolerance")]
    DegenerateFeatures,

    #[error("state {state} outside 1..={n_states}")]
    StateOutOfRange { state: usize, n_states: usize },

    #[error("{0}")]
    Precondition(String),

    #[error("{routine} failed: {reason}")]
    Linalg { routine: &'static str, reason: String },

    #[error("singular system in {context}")]
    Singular { context: &'static str },
}

pub(crate) fn check_dim(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            actual,
            context,
        })
    }
}
