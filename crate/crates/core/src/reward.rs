//! Quality score, ghost mask and step penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::tonemapped;
use crate::image::{HdrImage, Mask, Plane};
use crate::scene::MotionField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Threshold on max-normalized flow magnitude.
    pub k: f64,
    pub alpha: f64,
    /// Number of frames free of step penalty.
    pub h: usize,
    pub w_c: f64,
    pub w_p: f64,
    pub w_g: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            k: 0.2,
            alpha: 0.002,
            h: 3,
            w_c: 1.0,
            w_p: 1.0,
            w_g: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::InvalidConfig(format!("K = {} not in (0, 1)", self.k)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha = {}", self.alpha)));
        }
        if self.h < 1 {
            return Err(Error::InvalidConfig("H must be >= 1".into()));
        }
        if [self.w_c, self.w_p, self.w_g].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("term weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pixels whose flow magnitude, divided by the field's maximum, exceeds `k`.
pub fn ghost_mask(flow: &MotionField, k: f64) -> Mask {
    let mag = flow.magnitude();
    let peak = mag.max();
    if !(peak > 0.0) {
        return Plane::new(mag.width(), mag.height());
    }
    mag.map(|m| if m / peak > k { 1.0 } else { 0.0 })
}

fn masked_mean(err: &[f64], mask: &[f64]) -> f64 {
    let total: f64 = mask.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    err.iter().zip(mask).map(|(e, m)| e * m).sum::<f64>() / total
}

/// The three terms of the score (mean squared error in the tone-mapped
/// domain over all pixels, importance-weighted, ghost-weighted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTerms {
    pub construction: f64,
    pub priority: f64,
    pub ghost: f64,
}

impl ScoreTerms {
    pub fn score(&self, cfg: &RewardConfig) -> f64 {
        -(cfg.w_c * self.construction + cfg.w_p * self.priority + cfg.w_g * self.ghost)
    }
}

pub fn score_terms(fused: &HdrImage, gt: &HdrImage, importance: &Mask, ghost: &Mask) -> Result<ScoreTerms> {
    fused.ensure_same_geometry(gt)?;
    importance.ensure_same_geometry(gt)?;
    ghost.ensure_same_geometry(gt)?;
    let peak = gt.max();
    let a = tonemapped(fused, peak);
    let b = tonemapped(gt, peak);
    let err: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).collect();
    let n = err.len().max(1) as f64;
    Ok(ScoreTerms {
        construction: err.iter().sum::<f64>() / n,
        priority: masked_mean(&err, importance.data()),
        ghost: masked_mean(&err, ghost.data()),
    })
}

/// Negative weighted sum of tone-mapped L2 terms; 0 only for a perfect
/// reconstruction.
pub fn quality_score(
    fused: &HdrImage,
    gt: &HdrImage,
    importance: &Mask,
    ghost: &Mask,
    cfg: &RewardConfig,
) -> Result<f64> {
    Ok(score_terms(fused, gt, importance, ghost)?.score(cfg))
}

/// Zero for the first `h` frames, quadratic beyond.
pub fn step_penalty(j: usize, cfg: &RewardConfig) -> f64 {
    if j <= cfg.h {
        0.0
    } else {
        let over = (j - cfg.h) as f64;
        cfg.alpha * over * over
    }
}

pub fn step_reward(score_prev: f64, score_next: f64, j: usize, cfg: &RewardConfig) -> f64 {
    score_next - score_prev - step_penalty(j, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flow_from(mags: &[f64]) -> MotionField {
        MotionField {
            dx: Plane::from_vec(mags.len(), 1, mags.to_vec()).unwrap(),
            dy: Plane::new(mags.len(), 1),
        }
    }

    #[test]
    fn ghost_mask_thresholds() {
        let m = ghost_mask(&flow_from(&[10.0, 3.0, 1.0, 0.0]), 0.2);
        assert_eq!(m.data(), &[1.0, 1.0, 0.0, 0.0]);
        let empty = ghost_mask(&MotionField::zeros(4, 4), 0.2);
        assert_eq!(empty.sum(), 0.0);
        let exact = ghost_mask(&flow_from(&[10.0, 2.0]), 0.2);
        assert_eq!(exact.data(), &[1.0, 0.0]);
    }

    #[test]
    fn penalty_examples() {
        let cfg = RewardConfig {
            alpha: 0.5,
            ..RewardConfig::default()
        };
        assert_eq!(step_penalty(3, &cfg), 0.0);
        assert_eq!(step_penalty(4, &cfg), 0.5);
        assert_eq!(step_penalty(5, &cfg), 2.0);
        let one = RewardConfig {
            alpha: 1.0,
            ..RewardConfig::default()
        };
        assert!((step_reward(-0.5, -0.49, 4, &one) - (-0.99)).abs() < 1e-12);
        assert_eq!(step_reward(-0.3, -0.3, 2, &one), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        for bad in [
            RewardConfig { k: 0.0, ..Default::default() },
            RewardConfig { k: 1.0, ..Default::default() },
            RewardConfig { alpha: -1.0, ..Default::default() },
            RewardConfig { h: 0, ..Default::default() },
            RewardConfig { w_g: -0.1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn random_pair(seed: u64) -> (Plane, Plane, Plane, Plane) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = Plane::from_fn(12, 10, |_, _| rng.gen_range(0.0..1000.0));
        let fused = Plane::from_fn(12, 10, |_, _| rng.gen_range(0.0..1000.0));
        let imp = Plane::from_fn(12, 10, |x, _| if x < 4 { 1.0 } else { 0.0 });
        let ghost = Plane::from_fn(12, 10, |_, y| if y > 6 { 1.0 } else { 0.0 });
        (fused, gt, imp, ghost)
    }

    #[test]
    fn score_identity_and_isolation() {
        let (fused, gt, imp, ghost) = random_pair(1);
        let cfg = RewardConfig::default();
        assert_eq!(quality_score(&gt, &gt, &imp, &ghost, &cfg).unwrap(), 0.0);
        let zero = Plane::new(12, 10);
        let only_c = quality_score(&fused, &gt, &zero, &zero, &cfg).unwrap();
        let t = score_terms(&fused, &gt, &imp, &ghost).unwrap();
        assert_eq!(only_c, -t.construction);
        assert!(only_c < 0.0);
    }

    #[test]
    fn ghost_weight_is_linear() {
        let (fused, gt, imp, ghost) = random_pair(2);
        let at = |w_g: f64| {
            let cfg = RewardConfig { w_g, ..Default::default() };
            quality_score(&fused, &gt, &imp, &ghost, &cfg).unwrap()
        };
        let lhs = at(2.0) - at(0.0);
        let rhs = 2.0 * (at(1.0) - at(0.0));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn terms_match_direct_computation() {
        let (fused, gt, imp, ghost) = random_pair(3);
        let t = score_terms(&fused, &gt, &imp, &ghost).unwrap();
        let peak = gt.max();
        let tm = |v: f64| crate::camera::mu_compress((v / peak).clamp(0.0, 1.0));
        let (mut c, mut p, mut np, mut g, mut ng) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in 0..10 {
            for x in 0..12 {
                let e = (tm(fused.get(x, y)) - tm(gt.get(x, y))).powi(2);
                c += e;
                if x < 4 {
                    p += e;
                    np += 1.0;
                }
                if y > 6 {
                    g += e;
                    ng += 1.0;
                }
            }
        }
        assert!((t.construction - c / 120.0).abs() < 1e-12);
        assert!((t.priority - p / np).abs() < 1e-12);
        assert!((t.ghost - g / ng).abs() < 1e-12);
        assert!(score_terms(&fused, &Plane::new(3, 3), &imp, &ghost).is_err());
    }

    proptest::proptest! {
        #[test]
        fn penalty_is_monotone(j in 0usize..20, h in 0usize..6, alpha in 0.0f64..1.0) {
            let cfg = RewardConfig { h, alpha, ..Default::default() };
            proptest::prop_assert!(step_penalty(j + 1, &cfg) >= step_penalty(j, &cfg));
            proptest::prop_assert!(step_penalty(j, &cfg) >= 0.0);
            proptest::prop_assert_eq!(step_penalty(h, &cfg), 0.0);
        }

        #[test]
        fn score_is_non_positive(vals in proptest::collection::vec(0.0f64..10.0, 32), seed in 0u64..100) {
            let fused = Plane::from_vec(4, 4, vals[..16].to_vec()).unwrap();
            let gt = Plane::from_vec(4, 4, vals[16..].iter().map(|v| v + 0.1).collect()).unwrap();
            let imp = Plane::filled(4, 4, (seed % 2) as f64);
            let ghost = Plane::filled(4, 4, 1.0);
            let s = quality_score(&fused, &gt, &imp, &ghost, &RewardConfig::default()).unwrap();
            proptest::prop_assert!(s <= 0.0 && s.is_finite());
            let perfect = quality_score(&gt, &gt, &imp, &ghost, &RewardConfig::default()).unwrap();
            proptest::prop_assert_eq!(perfect, 0.0);
        }
    }
}
