//! Finished brackets as plain settings lists.

use serde::{Deserialize, Serialize};

use expobracket_core::camera::{CameraConstants, CaptureSettings};
use expobracket_core::env::{BracketState, Environment, Evaluation, Role};

use crate::error::{BaselineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Bracket order: under, mid, over, then extras.
    pub frames: Vec<(Role, CaptureSettings)>,
}

impl Schedule {
    pub fn from_state(state: &BracketState) -> Self {
        Self { frames: state.frames.iter().map(|f| (f.role, f.settings)).collect() }
    }

    /// Assigns roles by position.
    pub fn from_settings(settings: &[CaptureSettings]) -> Self {
        let frames = settings
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let role = match i {
                    0 => Role::Under,
                    1 => Role::Mid,
                    2 => Role::Over,
                    _ => Role::Extra,
                };
                (role, s)
            })
            .collect();
        Self { frames }
    }

    pub fn settings(&self) -> Vec<CaptureSettings> {
        self.frames.iter().map(|f| f.1).collect()
    }

    pub fn total_shutter(&self) -> f64 {
        self.frames.iter().map(|f| f.1.shutter()).sum()
    }

    pub fn to_state(&self, frame_interval: f64) -> Result<BracketState> {
        let state = BracketState::from_schedule(&self.settings(), frame_interval)?;
        let roles: Vec<Role> = state.frames.iter().map(|f| f.role).collect();
        if roles != self.frames.iter().map(|f| f.0).collect::<Vec<_>>() {
            return Err(BaselineError::InvalidSchedule(format!("role order {:?}", self.frames)));
        }
        Ok(state)
    }

    /// The bracket invariants of a finished state.
    pub fn check(&self, consts: &CameraConstants, frame_interval: f64) -> Result<()> {
        self.to_state(frame_interval)?
            .check_invariants(consts, frame_interval)
            .map_err(BaselineError::InvalidSchedule)
    }

    pub fn evaluate(&self, env: &Environment) -> Result<Evaluation> {
        let state = self.to_state(env.scene().frame_interval())?;
        Ok(env.evaluate(&state)?)
    }
}
