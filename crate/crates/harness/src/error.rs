use thiserror::Error;

use expobracket_agent::error::AgentError;
use expobracket_baselines::BaselineError;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint does not match the run config: {0}")]
    Mismatch(String),

    #[error("training diverged in epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("inconsistent report: {0}")]
    Report(String),

    #[error(transparent)]
    Core(#[from] expobracket_core::Error),

    #[error(transparent)]
    Agent(AgentError),

    #[error(transparent)]
    Baseline(#[from] BaselineError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    Toml(String),
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(m) => HarnessError::Config(m),
            e => HarnessError::Agent(e),
        }
    }
}

impl HarnessError {
    /// Process exit code: 2 for divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Divergence { .. } | HarnessError::Agent(AgentError::Divergence { .. }) => 2,
            _ => 1,
        }
    }
}
