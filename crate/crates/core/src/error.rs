use thiserror::Error;

use crate::model::ValidationReport;

/// Identifies one of the decoupled subsystems: the residual subsystem of a
/// sub-population or the shared deep-state subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Local(usize),
    Deep,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Block::Local(s) => write!(f, "sub-population {s}"),
            Block::Deep => write!(f, "deep subsystem"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("invalid model:\n{0}")]
    InvalidModel(ValidationReport),

    #[error("risk feasibility lost in {block} after {iteration} iterations (I - 2 lambda W P is not positive definite)")]
    FeasibilityLost { block: Block, iteration: usize },

    #[error("{what} did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("model is not weakly coupled")]
    NotWeaklyCoupled,

    #[error("policy is unstable in {block}: spectral radius {radius}")]
    UnstablePolicy { block: Block, radius: f64 },

    #[error("numeric overflow at step {step}: state magnitude exceeded 1e12")]
    NumericOverflow { step: usize },

    #[error("exponent {exponent:e} of the moment generating function is outside the f64 range; lambda*T is too large")]
    MgfOverflow { exponent: f64 },

    #[error("state correlation of {block} is singular")]
    SingularCovariance { block: Block },

    #[error("{rejected} of {attempted} perturbed rollouts overflowed (limit 20%)")]
    TooManyUnstableSamples { rejected: usize, attempted: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numerics (instability, infeasibility,
    /// divergence) rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FeasibilityLost { .. }
                | Error::NoConvergence { .. }
                | Error::UnstablePolicy { .. }
                | Error::NumericOverflow { .. }
                | Error::MgfOverflow { .. }
                | Error::SingularCovariance { .. }
                | Error::TooManyUnstableSamples { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
