//! Brightness-clustering bracket: k-means on the log radiance of a preview,
//! one frame per cluster exposed to mid-gray.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use expobracket_core::camera::{CameraConstants, CaptureSettings, ISO_200, ISO_GRID, NUM_SHUTTER};
use expobracket_core::camera::{shutter_seconds, LdrImage};
use expobracket_core::env::{mid_gray_shutter, Environment};
use expobracket_core::fusion::{fuse, FusionConfig};

use crate::error::{BaselineError, Result};
use crate::fixed::fixed_bracket;
use crate::schedule::Schedule;

/// Previews whose cluster centers span less than this many stops are
/// treated as a single intensity.
pub const DEGENERATE_SPAN: f64 = 1.0;
/// Side of the pixel blocks averaged into one sample.
pub const BLOCK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    pub max_iter: usize,
    /// Samples drawn from the preview before clustering.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self { max_iter: 20, max_samples: 4096, seed: 0 }
    }
}

/// Sorted 1-D k-means centers, initialised at evenly spaced quantiles.
pub fn kmeans_1d(samples: &[f64], k: usize, max_iter: usize) -> Vec<f64> {
    if samples.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mut centers: Vec<f64> = (0..k).map(|j| sorted[((2 * j + 1) * n / (2 * k)).min(n - 1)]).collect();
    for _ in 0..max_iter {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for &x in &sorted {
            let j = nearest_center(&centers, x);
            sum[j] += x;
            count[j] += 1;
        }
        let next: Vec<f64> = (0..k)
            .map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { centers[j] })
            .collect();
        if next == centers {
            break;
        }
        centers = next;
    }
    centers.sort_by(|a, b| a.total_cmp(b));
    centers
}

fn nearest_center(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (j, c) in centers.iter().enumerate() {
        if (c - x).abs() < (centers[best] - x).abs() {
            best = j;
        }
    }
    best
}

/// Grid shutter closest in stops to the one exposing `2^log_phi` to
/// mid-gray at ISO 200.
pub fn shutter_for_center(log_phi: f64, consts: &CameraConstants) -> CaptureSettings {
    let t = mid_gray_shutter(log_phi.exp2(), ISO_GRID[ISO_200], consts);
    let idx = (0..NUM_SHUTTER)
        .min_by(|&a, &b| {
            let da = (shutter_seconds(a) / t).log2().abs();
            let db = (shutter_seconds(b) / t).log2().abs();
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .expect("grid is non-empty");
    CaptureSettings { iso_idx: ISO_200, shutter_idx: idx }
}

/// Bracket from log2-radiance samples, or `None` when they are too
/// uniform to form three clusters.
pub fn bracket_from_log_radiance(samples: &[f64], consts: &CameraConstants, cfg: &HeuristicConfig) -> Option<Schedule> {
    let picked: Vec<f64> = if samples.len() > cfg.max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, samples.len(), cfg.max_samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| samples[i]).collect()
    } else {
        samples.to_vec()
    };
    let centers = kmeans_1d(&picked, 3, cfg.max_iter);
    if centers.len() < 3 || centers[2] - centers[0] < DEGENERATE_SPAN {
        return None;
    }
    // Brightest cluster gets the shortest shutter.
    let under = shutter_for_center(centers[2], consts);
    let mid = shutter_for_center(centers[1], consts);
    let over = shutter_for_center(centers[0], consts);
    Some(Schedule::from_settings(&[under, mid, over]))
}

/// Cluster block means of the merged previews; `None` when the previews are degenerate.
pub fn histogram_heuristic_bracket(
    previews: &[LdrImage],
    consts: &CameraConstants,
    fusion: &FusionConfig,
    cfg: &HeuristicConfig,
) -> Result<Option<Schedule>> {
    if previews.is_empty() {
        return Err(BaselineError::Config("no preview images".into()));
    }
    let merged = fuse(previews, previews.len() / 2, consts, fusion)?;
    let cells = ((merged.width() / BLOCK).max(1), (merged.height() / BLOCK).max(1));
    let samples: Vec<f64> = merged
        .block_means(cells.0, cells.1)
        .into_iter()
        .filter(|&v| v > 0.0)
        .map(f64::log2)
        .collect();
    Ok(bracket_from_log_radiance(&samples, consts, cfg))
}

/// The heuristic on the environment's fixed-bracket previews, falling back
/// to the fixed bracket on degenerate input. `previews` picks how many
/// frames are used: 1 (the mid) or 3.
pub fn heuristic_bracket(env: &Environment, previews: usize, cfg: &HeuristicConfig) -> Result<Schedule> {
    let consts = &env.config().camera;
    let fixed = fixed_bracket(env.scene(), consts)?;
    let state = fixed.to_state(env.scene().frame_interval())?;
    let frames = env.render(&state)?;
    let chosen: Vec<LdrImage> = match previews {
        1 => frames[1].iter().map(|f| (**f).clone()).collect(),
        3 => frames.iter().flatten().map(|f| (**f).clone()).collect(),
        n => return Err(BaselineError::Config(format!("{n} previews; expected 1 or 3"))),
    };
    if chosen.is_empty() {
        return Ok(fixed);
    }
    Ok(histogram_heuristic_bracket(&chosen, consts, &env.config().fusion, cfg)?.unwrap_or(fixed))
}
