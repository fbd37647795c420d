use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The characteristic is undefined at the supplied totals (zero denominator).
    #[error("characteristic undefined at totals {totals:?}")]
    Domain { totals: Vec<f64> },

    /// Every importance score is zero, so no proportional scheme exists.
    #[error("all importance scores are zero")]
    DegenerateScheme,

    #[error("design matrix is numerically singular (condition estimate {condition:e})")]
    SingularDesign { condition: f64 },

    #[error("surrogate fit failed: {0}")]
    FitFailed(String),

    /// Sen-Yates-Grundy needs at least two draws in the batch.
    #[error("batch {iteration} has size {size}; at least 2 draws are required")]
    BatchTooSmall { iteration: usize, size: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("label oracle failed for element {index}: {message}")]
    Oracle { index: usize, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
