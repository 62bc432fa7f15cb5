//! Reference-based exposure fusion and μ-law quality metrics.

use serde::{Deserialize, Serialize};

use crate::camera::{mu_compress, CameraConstants, LdrImage};
use crate::error::{Error, Result};
use crate::image::{HdrImage, Plane};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// LDR values above this are unreliable (near clipping).
    pub saturation_cutoff: f64,
    /// LDR values below this are unreliable (noise dominated).
    pub noise_floor: f64,
    /// Relative deviation from the reference beyond which a non-reference
    /// sample is treated as ghosting and dropped.
    pub deghost_threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            saturation_cutoff: 0.95,
            noise_floor: 0.05,
            deghost_threshold: 0.25,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.noise_floor
            && self.noise_floor < self.saturation_cutoff
            && self.saturation_cutoff < 1.0)
        {
            return Err(Error::InvalidConfig(
                "fusion requires 0 < noise_floor < saturation_cutoff < 1".into(),
            ));
        }
        if !(self.deghost_threshold > 0.0) {
            return Err(Error::InvalidConfig("deghost threshold must be > 0".into()));
        }
        Ok(())
    }

    #[inline]
    fn is_valid(&self, v: f64, saturated: bool) -> bool {
        !saturated && v >= self.noise_floor && v <= self.saturation_cutoff
    }
}

/// Radiance estimate of one LDR frame with its per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearized {
    pub radiance: HdrImage,
    pub valid: Vec<bool>,
}

/// Invert raw formation below saturation: `Φ̂ = (v·I_max − I0)·U / (T·ISO)`.
pub fn linearize(ldr: &LdrImage, consts: &CameraConstants, cfg: &FusionConfig) -> Result<Linearized> {
    let settings = ldr.settings.ok_or(Error::MissingMetadata)?;
    let scale = consts.gain_u / (settings.shutter() * settings.iso());
    let full = consts.i_max();
    let data = ldr
        .values
        .iter()
        .map(|&v| ((v * full - consts.dark_offset) * scale).max(0.0))
        .collect();
    let valid = ldr
        .values
        .iter()
        .zip(&ldr.saturated)
        .map(|(&v, &s)| cfg.is_valid(v, s))
        .collect();
    Ok(Linearized {
        radiance: Plane::from_vec(ldr.width, ldr.height, data)?,
        valid,
    })
}

/// Hat weight peaking at mid-scale.
#[inline]
fn tent(v: f64) -> f64 {
    1.0 - (2.0 * v - 1.0).abs()
}

/// Fuse a bracket around the frame at `ref_index`.
///
/// Each pixel is the tent-weighted mean of the valid linearized estimates.
/// Where the reference is valid, non-reference estimates deviating from it by
/// more than the deghost threshold (relative) are discarded. Pixels with no
/// valid estimate take the reference's own estimate.
pub fn fuse(
    bracket: &[LdrImage],
    ref_index: usize,
    consts: &CameraConstants,
    cfg: &FusionConfig,
) -> Result<HdrImage> {
    if bracket.is_empty() {
        return Err(Error::EmptyBracket);
    }
    if ref_index >= bracket.len() {
        return Err(Error::BadReference {
            index: ref_index,
            len: bracket.len(),
        });
    }
    let (w, h) = (bracket[0].width, bracket[0].height);
    if bracket.iter().any(|f| f.width != w || f.height != h) {
        return Err(Error::Geometry("bracket frames differ in size".into()));
    }
    let lin: Vec<Linearized> = bracket
        .iter()
        .map(|f| linearize(f, consts, cfg))
        .collect::<Result<_>>()?;
    let reference = &lin[ref_index];
    let mut out = Vec::with_capacity(w * h);
    for p in 0..w * h {
        let ref_est = reference.radiance.data()[p];
        let ref_valid = reference.valid[p];
        let mut anchor: Option<f64> = None;
        let mut weight_sum = 0.0;
        let mut delta_sum = 0.0;
        for (k, l) in lin.iter().enumerate() {
            if !l.valid[p] {
                continue;
            }
            let est = l.radiance.data()[p];
            if k != ref_index && ref_valid && (est - ref_est).abs() > cfg.deghost_threshold * ref_est {
                continue;
            }
            let wgt = tent(bracket[k].values[p]);
            // Accumulate relative to the first contributor so identical
            // estimates average back to themselves exactly.
            let a = *anchor.get_or_insert(est);
            weight_sum += wgt;
            delta_sum += wgt * (est - a);
        }
        out.push(match anchor {
            Some(a) if weight_sum > 0.0 => a + delta_sum / weight_sum,
            Some(a) => a,
            None => ref_est,
        });
    }
    Plane::from_vec(w, h, out)
}

/// Divide by `peak`, clip to `[0, 1]` and apply the μ-law curve.
pub fn tonemapped(img: &Plane, peak: f64) -> Plane {
    let inv = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    img.map(|v| mu_compress((v * inv).clamp(0.0, 1.0)))
}

/// Mean squared error between two planes.
pub fn mse(a: &Plane, b: &Plane) -> Result<f64> {
    a.ensure_same_geometry(b)?;
    let n = a.len().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// PSNR after normalizing both images by the ground-truth peak and μ-law
/// tone mapping.
pub fn psnr_mu(hdr: &HdrImage, gt: &HdrImage) -> Result<f64> {
    hdr.ensure_same_geometry(gt)?;
    let peak = gt.max();
    Ok(psnr_from_mse(mse(&tonemapped(hdr, peak), &tonemapped(gt, peak))?))
}

/// SSIM after the same normalization and tone mapping as [`psnr_mu`].
pub fn ssim_mu(hdr: &HdrImage, gt: &HdrImage) -> Result<f64> {
    hdr.ensure_same_geometry(gt)?;
    let peak = gt.max();
    ssim(&tonemapped(hdr, peak), &tonemapped(gt, peak))
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(w - n + 1) x (h - n + 1)`.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Mean SSIM with an 11x11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03
/// and unit dynamic range. Negative means are reported as 0.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    a.ensure_same_geometry(b)?;
    let (w, h) = (a.width(), a.height());
    const WIN: usize = 11;
    if w < WIN || h < WIN {
        return Err(Error::Geometry(format!("SSIM needs at least {WIN}x{WIN}, got {w}x{h}")));
    }
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let k = gaussian_kernel(WIN, 1.5);
    let x = a.data();
    let y = b.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let (mx, _, _) = filter_valid(x, w, h, &k);
    let (my, _, _) = filter_valid(y, w, h, &k);
    let (sxx, _, _) = filter_valid(&xx, w, h, &k);
    let (syy, _, _) = filter_valid(&yy, w, h, &k);
    let (sxy, ow, oh) = filter_valid(&xy, w, h, &k);
    let mut acc = 0.0;
    for i in 0..ow * oh {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok((acc / (ow * oh) as f64).clamp(0.0, 1.0))
}
