//! Shared parameter store with serialized Adam updates.

use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip applied before the moment update; 0 disables it.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// New parameters after one step on `grads`.
    pub fn step(&mut self, cfg: &AdamConfig, params: &[f64], grads: &[f64]) -> Vec<f64> {
        self.t += 1;
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        params
            .iter()
            .zip(grads)
            .enumerate()
            .map(|(i, (&p, &g))| {
                let g = g * scale;
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = self.m[i] / bc1;
                let vh = self.v[i] / bc2;
                p - cfg.lr * mh / (vh.sqrt() + cfg.eps)
            })
            .collect()
    }
}

/// One complete parameter version.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub version: u64,
    pub params: Vec<f64>,
}

/// Readers take `Arc` snapshots; writers build a whole new version under
/// the optimizer lock and swap it in, so no reader sees a partial update.
#[derive(Debug)]
pub struct ParamStore {
    current: RwLock<Arc<Snapshot>>,
    optimizer: Mutex<(AdamConfig, AdamState)>,
}

impl ParamStore {
    pub fn new(params: Vec<f64>, cfg: AdamConfig) -> Self {
        Self::with_state(params, cfg, None, 0)
    }

    pub fn with_state(params: Vec<f64>, cfg: AdamConfig, state: Option<AdamState>, version: u64) -> Self {
        let state = state.unwrap_or_else(|| AdamState::new(params.len()));
        Self {
            current: RwLock::new(Arc::new(Snapshot { version, params })),
            optimizer: Mutex::new((cfg, state)),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("store lock").clone()
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version
    }

    pub fn optimizer_state(&self) -> AdamState {
        self.optimizer.lock().expect("optimizer lock").1.clone()
    }

    /// Apply one Adam step and return the new version number.
    pub fn apply_update(&self, grads: &[f64]) -> Result<u64> {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(AgentError::NonFiniteGradient);
        }
        let mut opt = self.optimizer.lock().expect("optimizer lock");
        let cur = self.snapshot();
        if grads.len() != cur.params.len() {
            return Err(AgentError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                cur.params.len()
            )));
        }
        let (cfg, state) = &mut *opt;
        let params = state.step(cfg, &cur.params, grads);
        let version = cur.version + 1;
        *self.current.write().expect("store lock") = Arc::new(Snapshot { version, params });
        Ok(version)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let store = ParamStore::new(vec![1.0, -2.0, 3.0], AdamConfig::default());
        assert_eq!(store.apply_update(&[0.0; 3]).unwrap(), 1);
        assert_eq!(store.snapshot().params, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn sequential_updates_are_deterministic() {
        let g = [0.3, -0.1, 2.0];
        let a = ParamStore::new(vec![0.0; 3], AdamConfig::default());
        let b = ParamStore::new(vec![0.0; 3], AdamConfig::default());
        a.apply_update(&g).unwrap();
        a.apply_update(&g).unwrap();
        b.apply_update(&g).unwrap();
        b.apply_update(&g).unwrap();
        assert_eq!(a.snapshot(), b.snapshot());
        assert_eq!(a.version(), 2);
    }

    #[test]
    fn rejects_bad_gradients() {
        let s = ParamStore::new(vec![0.0; 2], AdamConfig::default());
        assert!(matches!(s.apply_update(&[f64::NAN, 0.0]), Err(AgentError::NonFiniteGradient)));
        assert!(s.apply_update(&[0.0]).is_err());
        assert_eq!(s.version(), 0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig { clip_norm: 0.0, ..Default::default() };
        let s = ParamStore::new(vec![0.0, 0.0], cfg.clone());
        s.apply_update(&[0.5, -4.0]).unwrap();
        let p = &s.snapshot().params;
        assert!((p[0] + cfg.lr).abs() < 1e-9);
        assert!((p[1] - cfg.lr).abs() < 1e-9);
    }

    #[test]
    fn concurrent_updates_are_counted() {
        let store = Arc::new(ParamStore::new(vec![0.0; 16], AdamConfig::default()));
        let (workers, per) = (4, 50);
        std::thread::scope(|s| {
            for w in 0..workers {
                let store = &store;
                s.spawn(move || {
                    for k in 0..per {
                        let g = vec![(w * per + k) as f64 * 1e-3; 16];
                        store.apply_update(&g).unwrap();
                        let snap = store.snapshot();
                        // Every entry of a version was written by the same step.
                        assert!(snap.params.iter().all(|&p| p == snap.params[0]));
                    }
                });
            }
        });
        assert_eq!(store.version(), (workers * per) as u64);
    }
}
