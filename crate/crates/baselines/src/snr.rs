//! Worst-case SNR bracket under a total exposure-time budget.

use serde::{Deserialize, Serialize};

use expobracket_core::camera::{CameraConstants, CaptureSettings, NUM_ISO, NUM_SHUTTER};
use expobracket_core::image::HdrImage;

use crate::error::{BaselineError, Result};
use crate::schedule::Schedule;

/// Relative slack on the budget comparison.
const BUDGET_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadianceHistogram {
    /// Representative radiance of each occupied bin.
    pub radiance: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RadianceHistogram {
    /// `bins` log-spaced bins over the image's positive radiance range; empty
    /// bins are dropped.
    pub fn from_image(img: &HdrImage, bins: usize) -> Result<Self> {
        let vals: Vec<f64> = img.data().iter().copied().filter(|&v| v > 0.0 && v.is_finite()).collect();
        Self::from_samples(&vals, bins)
    }

    pub fn from_samples(vals: &[f64], bins: usize) -> Result<Self> {
        if vals.is_empty() || bins == 0 {
            return Err(BaselineError::Config("no positive radiance to bin".into()));
        }
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min).log2();
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max).log2();
        if hi - lo <= 0.0 {
            return Ok(Self { radiance: vec![lo.exp2()], counts: vec![vals.len()] });
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for v in vals {
            let b = (((v.log2() - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let (radiance, counts) = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, &c)| ((lo + (b as f64 + 0.5) * width).exp2(), c))
            .unzip();
        Ok(Self { radiance, counts })
    }
}

/// Signal over noise standard deviation of one capture, 0 at saturation.
pub fn frame_snr(phi: f64, s: &CaptureSettings, consts: &CameraConstants) -> f64 {
    let electrons = phi * s.shutter();
    let g = consts.gain(s.iso());
    if electrons * g + consts.dark_offset >= consts.i_max() {
        return 0.0;
    }
    electrons * g / consts.noise_variance(electrons, s.iso()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSolution {
    pub schedule: Schedule,
    /// Minimum over bins of the best frame's SNR.
    pub worst_snr: f64,
}

fn worst_case(frames: &[&[f64]]) -> f64 {
    let bins = frames[0].len();
    (0..bins)
        .map(|b| frames.iter().map(|f| f[b]).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

/// Exhaustive search over three frames with distinct shutters whose total
/// time fits `budget` seconds. Ties go to the lower total ISO. Frames are
/// ordered darkest (under) to brightest (over).
pub fn snr_optimal_bracket(hist: &RadianceHistogram, budget: f64, consts: &CameraConstants) -> Result<SnrSolution> {
    let fastest: f64 = (NUM_SHUTTER - 3..NUM_SHUTTER)
        .map(|i| CaptureSettings { iso_idx: 0, shutter_idx: i }.shutter())
        .sum();
    if !(budget >= fastest * (1.0 - BUDGET_EPS)) {
        return Err(BaselineError::Infeasible(format!("budget {budget}s below the fastest bracket {fastest}s")));
    }
    if hist.radiance.is_empty() {
        return Err(BaselineError::Config("empty histogram".into()));
    }
    // SNR table per shutter, keeping only ISOs not dominated by a lower ISO
    // at the same shutter.
    let mut table: Vec<Vec<(CaptureSettings, Vec<f64>)>> = Vec::with_capacity(NUM_SHUTTER);
    for sh in 0..NUM_SHUTTER {
        let mut kept: Vec<(CaptureSettings, Vec<f64>)> = Vec::new();
        for iso in 0..NUM_ISO {
            let s = CaptureSettings { iso_idx: iso, shutter_idx: sh };
            let v: Vec<f64> = hist.radiance.iter().map(|&phi| frame_snr(phi, &s, consts)).collect();
            if !kept.iter().any(|(_, k)| k.iter().zip(&v).all(|(a, b)| a >= b)) {
                kept.push((s, v));
            }
        }
        table.push(kept);
    }
    let limit = budget * (1.0 + BUDGET_EPS);
    let mut best: Option<(f64, f64, [CaptureSettings; 3])> = None;
    let mut m12 = vec![0.0; hist.radiance.len()];
    for a in 0..NUM_SHUTTER {
        for b in a + 1..NUM_SHUTTER {
            for c in b + 1..NUM_SHUTTER {
                let total = [a, b, c].iter().map(|&i| CaptureSettings { iso_idx: 0, shutter_idx: i }.shutter()).sum::<f64>();
                if total > limit {
                    continue;
                }
                for (sa, va) in &table[a] {
                    for (sb, vb) in &table[b] {
                        m12.iter_mut().zip(va.iter().zip(vb)).for_each(|(m, (x, y))| *m = x.max(*y));
                        for (sc, vc) in &table[c] {
                            let worst = worst_case(&[&m12, vc]);
                            let iso_sum = sa.iso() + sb.iso() + sc.iso();
                            let better = match &best {
                                None => true,
                                Some((w, i, _)) => worst > *w || (worst == *w && iso_sum < *i),
                            };
                            if better {
                                best = Some((worst, iso_sum, [*sa, *sb, *sc]));
                            }
                        }
                    }
                }
            }
        }
    }
    let (worst_snr, _, frames) = best.ok_or_else(|| BaselineError::Infeasible("no combination fits".into()))?;
    let mut ordered = frames.to_vec();
    ordered.sort_by(|x, y| y.ev(consts).total_cmp(&x.ev(consts)).then(x.shutter_idx.cmp(&y.shutter_idx)));
    let [under, mid, over] = [ordered[0], ordered[1], ordered[2]];
    Ok(SnrSolution { schedule: Schedule::from_settings(&[under, mid, over]), worst_snr })
}
