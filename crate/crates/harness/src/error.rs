use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    /// A method cannot run on this population (e.g. non-positive auxiliaries).
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("label oracle failed: {0}")]
    Oracle(String),

    #[error(transparent)]
    Core(#[from] active_sampling::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Oracle(_) | HarnessError::Core(active_sampling::Error::Oracle { .. }) => 4,
            HarnessError::Precondition(_) | HarnessError::Core(_) => 3,
            HarnessError::Io(_) | HarnessError::Csv(_) => 1,
        }
    }
}

impl From<active_sampling::active::LoopFailure> for HarnessError {
    fn from(failure: active_sampling::active::LoopFailure) -> Self {
        match failure.error {
            active_sampling::Error::Oracle { .. } => HarnessError::Oracle(failure.to_string()),
            other => HarnessError::Core(other),
        }
    }
}
