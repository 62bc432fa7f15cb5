//! Reference bracketing schedulers and an exhaustive search oracle.

pub mod error;
pub mod fixed;
pub mod heuristic;
pub mod oracle;
pub mod schedule;
pub mod shutter_only;
pub mod snr;

pub use error::{BaselineError, Result};
pub use schedule::Schedule;
