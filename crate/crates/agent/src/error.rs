use thiserror::Error;

pub type Result<T> = std::result::Result<T, AgentError>;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Core(#[from] expobracket_core::Error),

    #[error("feature extraction: {0}")]
    Features(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid agent config: {0}")]
    Config(String),

    #[error("not a probability distribution: {0}")]
    Distribution(String),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("training diverged at update {update}: {reason}")]
    Divergence { update: u64, reason: String },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
