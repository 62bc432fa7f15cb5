//! Radiometric capture model.
//!
//! Exposure arithmetic over the discrete ISO / shutter grids, motion blur by
//! temporal supersampling of the scene, sensor noise and raw formation, and
//! the μ-law tone curve used by metrics and features.
//!
//! Raw formation for a pixel collecting `Φ·T` electrons at gain `g = ISO / U`:
//!
//! ```text
//! I = q(Φ·T·g + I0 + n),   Var(n) = Φ·T·g² + σ_read²·g² + σ_adc²
//! q(x) = min(⌊x + 0.5⌋, ADU),   ADU = 2^b − 1
//! ```
//!
//! The noise term is drawn as a single zero-mean Gaussian with the full
//! variance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Plane, RadianceFrame};
use crate::scene::RadianceScene;

/// Selectable ISO sensitivities.
pub const ISO_GRID: [f64; 24] = [
    50.0, 64.0, 80.0, 100.0, 125.0, 160.0, 200.0, 250.0, 320.0, 400.0, 500.0, 640.0, 800.0, 1000.0,
    1250.0, 1600.0, 2000.0, 2500.0, 3200.0, 4000.0, 5000.0, 6400.0, 8000.0, 10000.0,
];

/// Shutter speeds as denominators of one second, slowest first.
pub const SHUTTER_DENOMINATORS: [f64; 19] = [
    30.0, 40.0, 50.0, 60.0, 80.0, 100.0, 125.0, 160.0, 200.0, 250.0, 320.0, 400.0, 500.0, 640.0,
    800.0, 1000.0, 1250.0, 1600.0, 2000.0,
];

pub const NUM_ISO: usize = ISO_GRID.len();
pub const NUM_SHUTTER: usize = SHUTTER_DENOMINATORS.len();

/// Index of ISO 200 in [`ISO_GRID`].
pub const ISO_200: usize = 6;

/// Sub-frames per frame interval in the blur synthesis.
pub const SUBFRAMES_PER_INTERVAL: usize = 256;

/// μ of the tone curve.
pub const MU: f64 = 5000.0;

const EV_TIE_EPS: f64 = 1e-9;

pub fn shutter_seconds(idx: usize) -> f64 {
    1.0 / SHUTTER_DENOMINATORS[idx]
}

/// One grid point: an ISO and a shutter, both as grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaptureSettings {
    pub iso_idx: usize,
    pub shutter_idx: usize,
}

impl CaptureSettings {
    pub fn new(iso_idx: usize, shutter_idx: usize) -> Result<Self> {
        if iso_idx >= NUM_ISO || shutter_idx >= NUM_SHUTTER {
            return Err(Error::InvalidCamera(format!(
                "grid index out of range: iso {iso_idx}, shutter {shutter_idx}"
            )));
        }
        Ok(Self {
            iso_idx,
            shutter_idx,
        })
    }

    #[inline]
    pub fn iso(&self) -> f64 {
        ISO_GRID[self.iso_idx]
    }

    /// Exposure time in seconds.
    #[inline]
    pub fn shutter(&self) -> f64 {
        shutter_seconds(self.shutter_idx)
    }

    pub fn ev(&self, consts: &CameraConstants) -> f64 {
        ev_value(consts.f_number, self.shutter(), self.iso())
    }

    /// Every point of the full grid, ISO-major.
    pub fn all() -> impl Iterator<Item = CaptureSettings> {
        (0..NUM_ISO).flat_map(|i| {
            (0..NUM_SHUTTER).map(move |s| CaptureSettings {
                iso_idx: i,
                shutter_idx: s,
            })
        })
    }
}

/// Sensor and optics constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConstants {
    pub f_number: f64,
    /// Electrons per count at unit ISO/U gain; ISO `U` is unity gain.
    pub gain_u: f64,
    /// Read noise, electrons RMS.
    pub sigma_read: f64,
    /// ADC noise, counts RMS.
    pub sigma_adc: f64,
    /// Dark offset, counts.
    pub dark_offset: f64,
    pub bit_depth: u32,
}

impl Default for CameraConstants {
    fn default() -> Self {
        Self {
            f_number: 2.8,
            gain_u: 100.0,
            sigma_read: 2.0,
            sigma_adc: 1.0,
            dark_offset: 0.0,
            bit_depth: 12,
        }
    }
}

impl CameraConstants {
    /// Noise-free constants, handy for deterministic exposure checks.
    pub fn noiseless() -> Self {
        Self {
            sigma_read: 0.0,
            sigma_adc: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.f_number, self.gain_u];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("f_number and gain_u must be > 0".into()));
        }
        let non_negative = [self.sigma_read, self.sigma_adc, self.dark_offset];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("noise terms and dark offset must be >= 0".into()));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::InvalidConfig(format!("bit depth {}", self.bit_depth)));
        }
        if self.dark_offset >= self.i_max() {
            return Err(Error::InvalidConfig("dark offset at or above full scale".into()));
        }
        Ok(())
    }

    /// Full-scale count, equal to ADU.
    #[inline]
    pub fn i_max(&self) -> f64 {
        ((1u64 << self.bit_depth) - 1) as f64
    }

    /// Counts per electron at the given ISO.
    #[inline]
    pub fn gain(&self, iso: f64) -> f64 {
        iso / self.gain_u
    }

    /// Variance of the sensor noise in counts² for `electrons = Φ·T`.
    #[inline]
    pub fn noise_variance(&self, electrons: f64, iso: f64) -> f64 {
        let g = self.gain(iso);
        electrons * g * g + self.sigma_read * self.sigma_read * g * g + self.sigma_adc * self.sigma_adc
    }
}

#[inline]
fn ev_value(f_number: f64, shutter: f64, iso: f64) -> f64 {
    (f_number * f_number / shutter * 100.0 / iso).log2()
}

/// EV for arbitrary positive inputs.
pub fn ev_from(f_number: f64, shutter: f64, iso: f64) -> Result<f64> {
    if !(f_number > 0.0 && shutter > 0.0 && iso > 0.0) {
        return Err(Error::InvalidCamera(format!(
            "non-positive exposure input: F={f_number}, T={shutter}, ISO={iso}"
        )));
    }
    Ok(ev_value(f_number, shutter, iso))
}

pub fn ev_of(settings: &CaptureSettings, consts: &CameraConstants) -> f64 {
    settings.ev(consts)
}

/// How [`settings_for_ev`] picks among grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionPolicy {
    /// Whole grid; ties go to the lower ISO, then the longer shutter.
    LowestIso,
    /// Only the given ISO row.
    FixedIso(usize),
    /// The given ISO row when it can reach the target, otherwise the whole grid.
    PreferIso(usize),
}

/// Smallest EV step between neighbours along either grid axis.
pub fn min_grid_step() -> f64 {
    let iso = ISO_GRID
        .windows(2)
        .map(|w| (w[1] / w[0]).log2())
        .fold(f64::INFINITY, f64::min);
    let shutter = SHUTTER_DENOMINATORS
        .windows(2)
        .map(|w| (w[1] / w[0]).log2())
        .fold(f64::INFINITY, f64::min);
    iso.min(shutter)
}

/// Widest gap between neighbouring EV levels of the full grid. The nominal
/// shutter and ISO values are not exact thirds, so this exceeds both axis
/// steps.
pub fn max_grid_gap() -> f64 {
    let mut evs: Vec<f64> = CaptureSettings::all()
        .map(|s| ev_value(1.0, s.shutter(), s.iso()))
        .collect();
    evs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    evs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// Tolerance within which an EV target counts as reached: any target inside
/// the grid's span has a grid point at most this far away.
pub fn grid_tolerance() -> f64 {
    0.5 * max_grid_gap()
}

fn ev_span(candidates: &[CaptureSettings], consts: &CameraConstants) -> (f64, f64) {
    candidates.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        let ev = s.ev(consts);
        (lo.min(ev), hi.max(ev))
    })
}

fn row(iso_idx: usize) -> Vec<CaptureSettings> {
    (0..NUM_SHUTTER)
        .map(|s| CaptureSettings {
            iso_idx,
            shutter_idx: s,
        })
        .collect()
}

fn nearest(candidates: &[CaptureSettings], target: f64, consts: &CameraConstants) -> CaptureSettings {
    let mut best = candidates[0];
    let mut best_err = (best.ev(consts) - target).abs();
    for &c in &candidates[1..] {
        let err = (c.ev(consts) - target).abs();
        let better = if (err - best_err).abs() <= EV_TIE_EPS {
            (c.iso_idx, c.shutter_idx) < (best.iso_idx, best.shutter_idx)
        } else {
            err < best_err
        };
        if better {
            best = c;
            best_err = err;
        }
    }
    best
}

/// Grid settings whose EV is closest to `target_ev`.
///
/// Targets further than [`grid_tolerance`] outside the candidates' EV span are
/// rejected with the nearest achievable EV attached.
pub fn settings_for_ev(
    target_ev: f64,
    policy: SelectionPolicy,
    consts: &CameraConstants,
) -> Result<CaptureSettings> {
    if !target_ev.is_finite() {
        return Err(Error::InvalidCamera(format!("target EV {target_ev}")));
    }
    let tol = grid_tolerance();
    let all: Vec<CaptureSettings> = CaptureSettings::all().collect();
    let candidates = match policy {
        SelectionPolicy::LowestIso => all,
        SelectionPolicy::FixedIso(i) | SelectionPolicy::PreferIso(i) if i >= NUM_ISO => {
            return Err(Error::InvalidCamera(format!("ISO index {i}")));
        }
        SelectionPolicy::FixedIso(i) => row(i),
        SelectionPolicy::PreferIso(i) => {
            let r = row(i);
            let (lo, hi) = ev_span(&r, consts);
            if target_ev >= lo - tol && target_ev <= hi + tol {
                r
            } else {
                all
            }
        }
    };
    let (lo, hi) = ev_span(&candidates, consts);
    if target_ev < lo - tol || target_ev > hi + tol {
        let nearest_ev = target_ev.clamp(lo, hi);
        return Err(Error::EvOutOfRange {
            target: target_ev,
            nearest: nearest_ev,
        });
    }
    Ok(nearest(&candidates, target_ev, consts))
}

/// Number of sub-frames averaged for a shutter of `shutter` seconds.
pub fn supersample_count(shutter: f64, frame_interval: f64) -> Result<usize> {
    if !(shutter > 0.0 && frame_interval > 0.0) {
        return Err(Error::InvalidCamera(format!(
            "shutter {shutter} and interval {frame_interval} must be positive"
        )));
    }
    if shutter > frame_interval * (1.0 + 1e-12) {
        return Err(Error::ShutterExceedsInterval {
            shutter,
            interval: frame_interval,
        });
    }
    let x = SUBFRAMES_PER_INTERVAL as f64 * shutter / frame_interval;
    // Absorb representation error so exact multiples do not round up.
    let m = (x - x * 1e-12).ceil() as usize;
    Ok(m.clamp(1, SUBFRAMES_PER_INTERVAL))
}

/// Average of `m` radiance samples spread uniformly over the shutter window
/// `[u_start, u_start + T / Δτ)`, with the first sample at `u_start`.
pub fn simulate_blurred_hdr(scene: &RadianceScene, u_start: f64, shutter: f64) -> Result<RadianceFrame> {
    let dt = scene.frame_interval();
    let m = supersample_count(shutter, dt)?;
    let width = shutter / dt;
    let end = u_start + width;
    if !(u_start >= 0.0) || end > 1.0 + 1e-9 {
        return Err(Error::WindowOverflow { start: u_start, end });
    }
    let times: Vec<f64> = (0..m)
        .map(|i| (u_start + width * i as f64 / m as f64).min(1.0))
        .collect();
    let mut frame = scene.sample_radiance(times[0])?;
    if m == 1 || scene.objects().is_empty() {
        return Ok(frame);
    }

    let mut region: Option<(usize, usize, usize, usize)> = None;
    for &u in &times {
        if let Some(b) = scene.object_bounds(u) {
            region = Some(match region {
                None => b,
                Some(a) => (a.0.min(b.0), a.1.max(b.1), a.2.min(b.2), a.3.max(b.3)),
            });
        }
    }
    let Some(region) = region else {
        return Ok(frame);
    };

    // mean = f(u_0) + Σ (f(u_i) − f(u_0)) / m, exact when all samples agree.
    let (x0, x1, y0, y1) = region;
    let w = x1 - x0;
    let base = scene.sample_region(times[0], region);
    let mut acc = vec![0.0; base.len()];
    for &u in &times[1..] {
        let patch = scene.sample_region(u, region);
        for ((a, p), b) in acc.iter_mut().zip(&patch).zip(&base) {
            *a += p - b;
        }
    }
    let inv = 1.0 / m as f64;
    for y in y0..y1 {
        for x in x0..x1 {
            let i = (y - y0) * w + (x - x0);
            if acc[i] != 0.0 {
                frame.set(x, y, base[i] + acc[i] * inv);
            }
        }
    }
    Ok(frame)
}

/// Quantized raw counts with the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u16>,
    pub settings: CaptureSettings,
    pub i_max: u16,
}

/// `q(x) = min(⌊x + 0.5⌋, ADU)`, floored at zero.
#[inline]
pub fn quantize(x: f64, adu: f64) -> u16 {
    (x + 0.5).floor().clamp(0.0, adu) as u16
}

/// Noisy analog signal in counts, before quantization.
pub fn analog_signal<R: Rng + ?Sized>(
    blurred: &RadianceFrame,
    settings: &CaptureSettings,
    consts: &CameraConstants,
    rng: &mut R,
) -> Vec<f64> {
    let t = settings.shutter();
    let iso = settings.iso();
    let g = consts.gain(iso);
    let fixed_var = consts.noise_variance(0.0, iso);
    let g2 = g * g;
    blurred
        .data()
        .iter()
        .map(|&phi| {
            let electrons = phi * t;
            let mean = electrons * g + consts.dark_offset;
            let sd = (electrons * g2 + fixed_var).sqrt();
            let z: f64 = rng.sample(StandardNormal);
            mean + sd * z
        })
        .collect()
}

pub fn synthesize_noise<R: Rng + ?Sized>(
    blurred: &RadianceFrame,
    settings: &CaptureSettings,
    consts: &CameraConstants,
    rng: &mut R,
) -> RawImage {
    let adu = consts.i_max();
    let counts = analog_signal(blurred, settings, consts, rng)
        .into_iter()
        .map(|x| quantize(x, adu))
        .collect();
    RawImage {
        width: blurred.width(),
        height: blurred.height(),
        counts,
        settings: *settings,
        i_max: adu as u16,
    }
}

/// Normalized LDR capture.
#[derive(Debug, Clone, PartialEq)]
pub struct LdrImage {
    pub width: usize,
    pub height: usize,
    /// Raw counts divided by full scale, in `[0, 1]`.
    pub values: Vec<f64>,
    pub saturated: Vec<bool>,
    /// Gain metadata for linearization; absent for synthetic placeholders.
    pub settings: Option<CaptureSettings>,
}

impl LdrImage {
    /// Frame that received no light and has no metadata.
    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            saturated: vec![false; width * height],
            settings: None,
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    pub fn as_plane(&self) -> Plane {
        Plane::from_vec(self.width, self.height, self.values.clone()).expect("geometry")
    }
}

pub fn develop(raw: &RawImage) -> LdrImage {
    let full = raw.i_max as f64;
    LdrImage {
        width: raw.width,
        height: raw.height,
        values: raw.counts.iter().map(|&c| c as f64 / full).collect(),
        saturated: raw.counts.iter().map(|&c| c == raw.i_max).collect(),
        settings: Some(raw.settings),
    }
}

/// μ-law compression for inputs already known to lie in `[0, 1]`.
#[inline]
pub fn mu_compress(x: f64) -> f64 {
    (MU * x).ln_1p() / MU.ln_1p()
}

#[inline]
pub fn mu_expand(y: f64) -> f64 {
    (y * MU.ln_1p()).exp_m1() / MU
}

pub fn tonemap_mu(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidCamera(format!("tone-map input {x} outside [0, 1]")));
    }
    Ok(mu_compress(x))
}

pub fn itmo_mu(y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidCamera(format!("inverse tone-map input {y} outside [0, 1]")));
    }
    Ok(mu_expand(y))
}

/// Blur, then noise, then development. Blur must precede noise because it
/// changes the electron count each pixel integrates.
pub fn capture<R: Rng + ?Sized>(
    scene: &RadianceScene,
    u_start: f64,
    settings: &CaptureSettings,
    consts: &CameraConstants,
    rng: &mut R,
) -> Result<LdrImage> {
    let blurred = simulate_blurred_hdr(scene, u_start, settings.shutter())?;
    Ok(develop(&synthesize_noise(&blurred, settings, consts, rng)))
}
