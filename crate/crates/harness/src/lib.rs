//! Experiment harness: configuration, corpus generation, training,
//! scheduler comparison, the oracle-gap study, and report and plot output.

pub mod config;
pub mod corpus;
pub mod error;
pub mod plot;
pub mod report;
pub mod run;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
pub use report::Report;
