//! The fixed ±2 stop bracket at ISO 200.

use expobracket_core::camera::{CameraConstants, ISO_200};
use expobracket_core::env::{EnvConfig, Environment};
use expobracket_core::scene::RadianceScene;

use crate::error::Result;
use crate::schedule::Schedule;

pub fn fixed_bracket(scene: &RadianceScene, consts: &CameraConstants) -> Result<Schedule> {
    let cfg = EnvConfig { camera: consts.clone(), iso_lock: Some(ISO_200), ..Default::default() };
    let env = Environment::new(scene, cfg)?;
    Ok(Schedule::from_state(&env.reset()?))
}
