use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("normalized time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("reversed interval: u0={0} > u1={1}")]
    ReversedInterval(f64, f64),

    #[error("invalid camera input: {0}")]
    InvalidCamera(String),

    #[error("target EV {target:.4} outside achievable span; nearest achievable is {nearest:.4}")]
    EvOutOfRange { target: f64, nearest: f64 },

    #[error("shutter {shutter}s exceeds frame interval {interval}s")]
    ShutterExceedsInterval { shutter: f64, interval: f64 },

    #[error("capture window [{start}, {end}] leaves the frame interval")]
    WindowOverflow { start: f64, end: f64 },

    #[error("bracket needs {total}s of exposure but the budget is {budget}s")]
    OverBudget { total: f64, budget: f64 },

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("LDR frame carries no gain metadata")]
    MissingMetadata,

    #[error("empty bracket")]
    EmptyBracket,

    #[error("reference index {index} out of range for {len} frames")]
    BadReference { index: usize, len: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("episode already finished")]
    EpisodeDone,
}
