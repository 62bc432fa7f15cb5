//! Observation features: per-frame tone-mapped histograms, a coarse
//! log-luminance grid of the mid frame, and stage/settings encoding.

use serde::{Deserialize, Serialize};

use expobracket_core::camera::{mu_compress, CameraConstants, CaptureSettings, LdrImage, NUM_ISO, NUM_SHUTTER};
use expobracket_core::env::{M_MAX, MID_INDEX};

use crate::error::{AgentError, Result};

/// Frame slots encoded in the histogram and settings blocks.
pub const FRAME_SLOTS: usize = M_MAX;

/// Values per frame in the settings block.
const SETTINGS_PER_SLOT: usize = 4;

const LOG_FLOOR: f64 = 1.0 / 4096.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub bins: usize,
    /// Side of the square grid summarizing the mid frame.
    pub grid: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { bins: 64, grid: 8 }
    }
}

impl FeatureConfig {
    pub fn histogram_dim(&self) -> usize {
        self.bins * FRAME_SLOTS
    }

    pub fn semantic_dim(&self) -> usize {
        self.grid * self.grid
    }

    pub fn stage_dim(&self) -> usize {
        2 + SETTINGS_PER_SLOT * FRAME_SLOTS
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.histogram_dim(), self.semantic_dim(), self.stage_dim()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageInfo {
    pub stage: usize,
    pub max_stage: usize,
}

/// Inputs of the three network branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub histogram: Vec<f64>,
    pub semantic: Vec<f64>,
    pub stage: Vec<f64>,
}

impl FeatureVector {
    pub fn branches(&self) -> [&[f64]; 3] {
        [&self.histogram, &self.semantic, &self.stage]
    }

    pub fn is_finite(&self) -> bool {
        self.branches().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Bin of an LDR value after μ-law tone mapping.
pub fn histogram_bin(value: f64, bins: usize) -> usize {
    let t = mu_compress(value.clamp(0.0, 1.0));
    ((t * bins as f64) as usize).min(bins - 1)
}

fn histogram(ldr: &LdrImage, bins: usize, out: &mut [f64]) {
    let n = ldr.values.len().max(1) as f64;
    for &v in &ldr.values {
        out[histogram_bin(v, bins)] += 1.0;
    }
    for h in out.iter_mut() {
        *h /= n;
    }
}

fn grid_summary(ldr: &LdrImage, cells: usize, out: &mut [f64]) {
    let (w, h) = (ldr.width, ldr.height);
    let scale = LOG_FLOOR.log2().abs();
    for cy in 0..cells {
        let (y0, y1) = (cy * h / cells, ((cy + 1) * h / cells).max(cy * h / cells + 1).min(h));
        for cx in 0..cells {
            let (x0, x1) = (cx * w / cells, ((cx + 1) * w / cells).max(cx * w / cells + 1).min(w));
            let mut acc = 0.0;
            let mut count = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += ldr.values[y * w + x];
                    count += 1;
                }
            }
            let mean = if count > 0 { acc / count as f64 } else { 0.0 };
            out[cy * cells + cx] = (mean.max(LOG_FLOOR).log2() + scale) / scale;
        }
    }
}

fn settings_block(s: Option<CaptureSettings>, consts: &CameraConstants, out: &mut [f64]) {
    if let Some(s) = s {
        out[0] = 1.0;
        // EV of the grid spans roughly 1..15 at the default aperture.
        out[1] = s.ev(consts) / 16.0;
        out[2] = s.iso_idx as f64 / (NUM_ISO - 1) as f64;
        out[3] = s.shutter_idx as f64 / (NUM_SHUTTER - 1) as f64;
    }
}

/// Features of a bracket's rendered frames.
///
/// `ldrs` are the frames in bracket order (dropped frames as black images);
/// `settings` are the corresponding grid settings, which the agent also
/// observes. Missing slots encode as black frames with no settings.
pub fn extract_features(
    ldrs: &[&LdrImage],
    settings: &[CaptureSettings],
    stage: StageInfo,
    consts: &CameraConstants,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    if ldrs.is_empty() {
        return Err(AgentError::Features("no frames".into()));
    }
    if ldrs.len() > FRAME_SLOTS || settings.len() > FRAME_SLOTS {
        return Err(AgentError::Features(format!("more than {FRAME_SLOTS} frames")));
    }
    let mut hist = vec![0.0; cfg.histogram_dim()];
    for slot in 0..FRAME_SLOTS {
        let out = &mut hist[slot * cfg.bins..(slot + 1) * cfg.bins];
        match ldrs.get(slot) {
            Some(l) => histogram(l, cfg.bins, out),
            None => out[0] = 1.0,
        }
    }
    let mut semantic = vec![0.0; cfg.semantic_dim()];
    let mid = ldrs[MID_INDEX.min(ldrs.len() - 1)];
    grid_summary(mid, cfg.grid, &mut semantic);
    let mut st = vec![0.0; cfg.stage_dim()];
    st[0] = stage.stage as f64 / M_MAX as f64;
    st[1] = stage.max_stage as f64 / M_MAX as f64;
    for slot in 0..FRAME_SLOTS {
        let o = 2 + slot * SETTINGS_PER_SLOT;
        settings_block(settings.get(slot).copied(), consts, &mut st[o..o + SETTINGS_PER_SLOT]);
    }
    Ok(FeatureVector { histogram: hist, semantic, stage: st })
}
