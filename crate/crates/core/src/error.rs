use thiserror::Error;

use crate::solver::EquilibriumSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("price of good {good} is {price}, demand is unbounded at nonpositive prices")]
    NonpositivePrice { good: usize, price: f64 },

    #[error("utility vector has no positive entry")]
    ZeroUtility,

    #[error("buyer {buyer} has no positive utility for any good")]
    DegenerateBuyer { buyer: usize },

    #[error("no buyer type with positive probability values good {good}")]
    UnsupportedGood { good: usize },

    #[error("solver stopped after {iterations} iterations with relative gap {relative_gap:e}")]
    MaxIters {
        iterations: usize,
        relative_gap: f64,
        best: Option<Box<EquilibriumSolution>>,
    },

    #[error("buyer at step {t} does not match any type with positive probability")]
    TypeMismatch { t: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from bad input rather than a failed computation.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. } | Error::Json(_) | Error::Dimension { .. } | Error::UnsupportedGood { .. }
        )
    }
}
