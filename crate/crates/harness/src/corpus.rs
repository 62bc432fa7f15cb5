//! Seeded train and evaluation scene sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use expobracket_core::scene::{generate_scene, RadianceScene, SceneSpec};

use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub train: Vec<SceneSpec>,
    pub eval: Vec<SceneSpec>,
}

fn spec(cfg: &RunConfig, rng: &mut ChaCha8Rng, motion: Option<f64>) -> SceneSpec {
    let c = &cfg.corpus;
    SceneSpec {
        width: c.resolution,
        height: c.resolution,
        dynamic_range_stops: rng.gen_range(c.dynamic_range_min..=c.dynamic_range_max),
        object_count: rng.gen_range(c.objects_min..=c.objects_max),
        motion_magnitude: motion.unwrap_or(0.0),
        static_flag: motion.is_none(),
        seed: rng.gen(),
    }
}

/// Training scenes draw motion uniformly from the configured range.
/// Evaluation scenes cycle through the nonzero motion buckets so each one is
/// populated.
pub fn corpus_specs(cfg: &RunConfig) -> Corpus {
    let c = &cfg.corpus;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = Vec::with_capacity(c.train_dynamic + c.train_static);
    for _ in 0..c.train_dynamic {
        let m = rng.gen_range(c.motion_min..=c.motion_max);
        train.push(spec(cfg, &mut rng, Some(m)));
    }
    for _ in 0..c.train_static {
        train.push(spec(cfg, &mut rng, None));
    }
    rng.set_stream(1);
    let edges = &cfg.eval.motion_buckets;
    let ranges: Vec<(f64, f64)> = edges
        .windows(2)
        .map(|w| (w[0].max(c.motion_min), w[1].min(c.motion_max)))
        .filter(|(lo, hi)| lo < hi)
        .collect();
    let mut eval = Vec::with_capacity(c.eval_dynamic + c.eval_static);
    for i in 0..c.eval_dynamic {
        let (lo, hi) = if ranges.is_empty() { (c.motion_min, c.motion_max) } else { ranges[i % ranges.len()] };
        let m = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        eval.push(spec(cfg, &mut rng, Some(m)));
    }
    for _ in 0..c.eval_static {
        eval.push(spec(cfg, &mut rng, None));
    }
    Corpus { train, eval }
}

pub fn generate_all(specs: &[SceneSpec]) -> Result<Vec<RadianceScene>> {
    Ok(specs.iter().map(generate_scene).collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let cfg = RunConfig::default();
        let a = corpus_specs(&cfg);
        assert_eq!(a.train.len(), 32);
        assert_eq!(a.train.iter().filter(|s| s.static_flag).count(), 8);
        assert_eq!(a.eval.len(), 20);
        assert_eq!(a, corpus_specs(&cfg));
        assert_ne!(a, corpus_specs(&cfg.clone().with_seed(1)));
        let seeds: std::collections::HashSet<u64> = a.train.iter().chain(&a.eval).map(|s| s.seed).collect();
        assert_eq!(seeds.len(), 52);
    }

    #[test]
    fn eval_buckets_are_covered() {
        let cfg = RunConfig::default();
        let eval = corpus_specs(&cfg).eval;
        let edges = &cfg.eval.motion_buckets;
        for w in edges.windows(2) {
            let n = eval.iter().filter(|s| !s.static_flag && s.motion_magnitude > w[0] && s.motion_magnitude <= w[1]).count();
            assert!(n >= 4, "bucket {w:?} has {n}");
        }
        assert!(eval.iter().all(|s| s.validate().is_ok()));
    }
}
