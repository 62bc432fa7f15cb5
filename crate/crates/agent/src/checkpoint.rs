//! JSON checkpoints of trained agents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};
use crate::network::{LayerShape, Network};
use crate::train::TrainedAgent;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    layers: Vec<LayerShape>,
    trained: TrainedAgent,
}

pub fn to_json(t: &TrainedAgent) -> Result<String> {
    let ck = Checkpoint {
        format_version: FORMAT_VERSION,
        layers: t.agent.net.layer_shapes(),
        trained: t.clone(),
    };
    Ok(serde_json::to_string(&ck)?)
}

/// Parse a checkpoint, rebuilding the network from its config and
/// rejecting any disagreement in layer shapes or parameter count.
pub fn from_json(text: &str) -> Result<TrainedAgent> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.format_version != FORMAT_VERSION {
        return Err(AgentError::Checkpoint(format!("unsupported format {}", ck.format_version)));
    }
    let t = ck.trained;
    let rebuilt = Network::new(t.config.features.clone(), t.config.net.clone())?;
    if rebuilt.layer_shapes() != ck.layers || rebuilt != t.agent.net {
        return Err(AgentError::Checkpoint("layer shapes do not match the stored config".into()));
    }
    t.agent.net.check_params(&t.agent.params).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    Ok(t)
}

pub fn save(t: &TrainedAgent, path: &Path) -> Result<()> {
    fs::write(path, to_json(t)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainedAgent> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;
    use crate::network::{ActionMask, NetConfig};
    use crate::store::AdamState;
    use crate::train::{Agent, TrainConfig};
    use expobracket_core::env::EnvConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained() -> TrainedAgent {
        let config = TrainConfig {
            net: NetConfig { branch_hidden: vec![3], trunk_hidden: vec![4] },
            features: FeatureConfig { bins: 4, grid: 2 },
            ..Default::default()
        };
        let net = Network::new(config.features.clone(), config.net.clone()).unwrap();
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(1), 0.5);
        let n = params.len();
        TrainedAgent {
            agent: Agent { net, params, mask: ActionMask::full() },
            curve: vec![],
            config,
            env: EnvConfig::default(),
            optimizer: AdamState::new(n),
            version: 0,
            episodes: 0,
        }
    }

    #[test]
    fn round_trip() {
        let t = trained();
        let back = from_json(&to_json(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("agent.json");
        save(&t, &p).unwrap();
        assert_eq!(load(&p).unwrap(), t);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut t = trained();
        t.agent.params.pop();
        assert!(from_json(&to_json(&t).unwrap()).is_err());
        let mut t = trained();
        t.config.net.trunk_hidden = vec![5];
        assert!(from_json(&to_json(&t).unwrap()).is_err());
    }
}
