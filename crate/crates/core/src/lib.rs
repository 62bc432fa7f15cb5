//! Blur-aware capture simulation and the sequential exposure-bracketing
//! decision process built on it.
//!
//! * [`scene`]: procedural dynamic HDR scenes with exact sub-frame sampling.
//! * [`camera`]: exposure grids, blur and noise synthesis, raw formation.
//! * [`fusion`]: reference-based exposure fusion and μ-law metrics.
//! * [`reward`]: quality score, ghost mask and step penalty.
//! * [`env`]: the three-stage customize/inherit bracketing MDP.

pub mod camera;
pub mod env;
pub mod error;
pub mod fusion;
pub mod image;
pub mod reward;
pub mod scene;

pub use error::{Error, Result};
