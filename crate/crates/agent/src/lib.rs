//! Actor-critic bracketing agent: observation features, the policy/value
//! network, loss and gradients, the shared parameter store and training.

pub mod checkpoint;
pub mod error;
pub mod features;
pub mod loss;
pub mod network;
pub mod store;
pub mod train;

pub use error::{AgentError, Result};
pub use train::{train, Agent, TrainConfig, TrainedAgent};
