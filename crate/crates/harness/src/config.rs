//! Run configuration, read from and echoed as TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use expobracket_agent::features::FeatureConfig;
use expobracket_agent::network::NetConfig;
use expobracket_agent::train::TrainConfig;
use expobracket_baselines::oracle::ReducedGrid;
use expobracket_core::env::{EnvConfig, STOP_STAGE};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub train_dynamic: usize,
    pub train_static: usize,
    pub eval_dynamic: usize,
    pub eval_static: usize,
    pub resolution: usize,
    /// Motion range of dynamic scenes, pixels per frame interval.
    pub motion_min: f64,
    pub motion_max: f64,
    pub dynamic_range_min: f64,
    pub dynamic_range_max: f64,
    pub objects_min: usize,
    pub objects_max: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            train_dynamic: 24,
            train_static: 8,
            eval_dynamic: 16,
            eval_static: 4,
            resolution: 128,
            motion_min: 2.0,
            motion_max: 60.0,
            dynamic_range_min: 8.0,
            dynamic_range_max: 14.0,
            objects_min: 1,
            objects_max: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Frames given to the clustering heuristic: 1 or 3.
    pub heuristic_previews: usize,
    /// Total exposure budget of the SNR baseline in seconds; unset means one
    /// frame interval.
    pub snr_budget: Option<f64>,
    pub snr_bins: usize,
    /// Bucket edges in pixels: a zero-motion bucket, then `(e[i], e[i+1]]`.
    pub motion_buckets: Vec<f64>,
    /// Uniform-random episodes averaged per scene.
    pub random_episodes: usize,
    pub oracle_grid: ReducedGrid,
    pub oracle_stages: usize,
    /// Dynamic evaluation scenes used in the gap study.
    pub oracle_scenes: usize,
    pub oracle_threads: usize,
    pub include_shutter_only: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            heuristic_previews: 3,
            snr_budget: None,
            snr_bins: 16,
            motion_buckets: vec![0.0, 15.0, 30.0, 60.0],
            random_episodes: 4,
            oracle_grid: ReducedGrid::default(),
            oracle_stages: 3,
            oracle_scenes: 8,
            oracle_threads: 1,
            include_shutter_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root seed of the corpus, training streams and capture noise.
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusSpec::default(),
            env: EnvConfig { max_stage: STOP_STAGE, ..Default::default() },
            train: TrainConfig {
                net: NetConfig { branch_hidden: vec![32], trunk_hidden: vec![64] },
                features: FeatureConfig { bins: 32, grid: 4 },
                ..Default::default()
            },
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Toml(e.to_string()))
    }

    /// Push the root seed into every sub-config that carries one.
    pub fn resolved(mut self) -> Self {
        self.train.seed = self.seed;
        self.env.noise_seed = self.seed;
        self
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }.resolved()
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        let bad = |m: String| Err(HarnessError::Config(m));
        if c.train_dynamic + c.train_static == 0 {
            return bad("empty training corpus".into());
        }
        if c.resolution < 16 {
            return bad(format!("resolution {} below 16", c.resolution));
        }
        if !(c.motion_min > 0.0 && c.motion_min <= c.motion_max) {
            return bad(format!("motion range [{}, {}]", c.motion_min, c.motion_max));
        }
        if !(4.0..=20.0).contains(&c.dynamic_range_min)
            || !(4.0..=20.0).contains(&c.dynamic_range_max)
            || c.dynamic_range_min > c.dynamic_range_max
        {
            return bad(format!("dynamic range [{}, {}]", c.dynamic_range_min, c.dynamic_range_max));
        }
        if c.objects_min > c.objects_max {
            return bad("objects_min > objects_max".into());
        }
        self.env.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train.validate()?;
        let e = &self.eval;
        if ![1, 3].contains(&e.heuristic_previews) {
            return bad(format!("heuristic_previews {}", e.heuristic_previews));
        }
        if e.snr_budget.is_some_and(|b| !(b > 0.0)) || e.snr_bins == 0 {
            return bad("snr budget and bins must be positive".into());
        }
        let b = &e.motion_buckets;
        if b.len() < 2 || b[0] != 0.0 || b.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(format!("motion buckets {b:?} must start at 0 and increase"));
        }
        e.oracle_grid.validate().map_err(|err| HarnessError::Config(err.to_string()))?;
        if !(1..=expobracket_baselines::oracle::MAX_ORACLE_STAGES).contains(&e.oracle_stages) {
            return bad(format!("oracle_stages {}", e.oracle_stages));
        }
        if e.oracle_threads == 0 {
            return bad("oracle_threads must be >= 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the TOML echo.
    pub fn hash(&self) -> Result<String> {
        Ok(format!("{:x}", Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn snr_budget(&self, frame_interval: f64) -> f64 {
        self.eval.snr_budget.unwrap_or(frame_interval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default().with_seed(7);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.env.noise_seed, 7);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[corpus]\ntrain_dynamic = 2\n").unwrap();
        assert_eq!(cfg.corpus.train_dynamic, 2);
        assert_eq!(cfg.corpus.train_static, 8);
        assert_eq!(cfg.train.seed, 3);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("[corpus]\nresolution = 4\n").is_err());
        assert!(RunConfig::from_toml("[eval]\nmotion_buckets = [5.0, 10.0]\n").is_err());
        assert!(RunConfig::from_toml("[env]\nmax_stage = 9\n").is_err());
        assert!(RunConfig::from_toml("[train]\nworkers = 0\n").is_err());
        assert!(RunConfig::from_toml("not toml at all [").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), a.with_seed(1).hash().unwrap());
    }
}
