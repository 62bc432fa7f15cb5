//! Ablation: the agent with its ISO head frozen at 200.

use expobracket_agent::train::{train, TrainConfig, TrainedAgent};
use expobracket_core::camera::ISO_200;
use expobracket_core::env::EnvConfig;
use expobracket_core::scene::RadianceScene;

use crate::error::Result;

/// The environment is locked to ISO 200 as well, so derived frames stay on
/// that row.
pub fn shutter_only_config(env_cfg: &EnvConfig, cfg: &TrainConfig) -> (EnvConfig, TrainConfig) {
    (
        EnvConfig { iso_lock: Some(ISO_200), ..env_cfg.clone() },
        TrainConfig { shutter_only: true, ..cfg.clone() },
    )
}

pub fn shutter_only_agent(corpus: &[RadianceScene], env_cfg: &EnvConfig, cfg: &TrainConfig) -> Result<TrainedAgent> {
    let (env, cfg) = shutter_only_config(env_cfg, cfg);
    Ok(train(corpus, &env, &cfg)?)
}
