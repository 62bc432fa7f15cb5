use thiserror::Error;

pub type Result<T> = std::result::Result<T, BaselineError>;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Core(#[from] expobracket_core::Error),

    #[error(transparent)]
    Agent(#[from] expobracket_agent::error::AgentError),

    #[error("no feasible bracket: {0}")]
    Infeasible(String),

    #[error("search grid too large: {0}")]
    GridTooLarge(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid baseline config: {0}")]
    Config(String),
}
