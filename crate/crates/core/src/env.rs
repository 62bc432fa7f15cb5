//! The sequential bracketing decision process.
//!
//! Stage 1 picks the mid (0-EV) frame and derives ±2-stop sides. Stage 2 picks
//! the under frame; the over frame mirrors it around the inherited mid. Stage 3
//! picks the over frame. From stage 3 on the agent may stop or append extras.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{
    capture, develop, grid_tolerance, simulate_blurred_hdr, synthesize_noise, CameraConstants, CaptureSettings, LdrImage, SelectionPolicy, ISO_200,
    NUM_ISO, NUM_SHUTTER,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse, psnr_mu, ssim_mu, FusionConfig};
use crate::image::{HdrImage, Mask, Plane};
use crate::reward::{ghost_mask, quality_score, step_penalty, step_reward, RewardConfig};
use crate::scene::RadianceScene;

/// Hard cap on the number of stages (and frames) in an episode.
pub const M_MAX: usize = 5;

/// Stage from which the stop decision is legal.
pub const STOP_STAGE: usize = 3;

/// Auto-exposure target as a fraction of full scale.
pub const AUTO_EXPOSURE_TARGET: f64 = 0.18;

/// Shutter indices allowed for the auto-exposed mid so that ±2 stops at
/// ISO 200 stay on the grid and inside one frame interval.
pub const AUTO_MID_SHUTTERS: std::ops::RangeInclusive<usize> = 7..=12;

const SLOT_EPS: f64 = 1e-9;
const CACHE_LIMIT: usize = 4096;
const BLUR_CACHE_LIMIT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Under,
    Mid,
    Over,
    Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub role: Role,
    pub settings: CaptureSettings,
    /// Normalized start time of the capture slot.
    pub slot_start: f64,
    /// Set when a derived frame could not reach its target EV and was pinned
    /// to the nearest achievable one.
    pub clamped: bool,
}

impl Frame {
    pub fn slot_end(&self, frame_interval: f64) -> f64 {
        self.slot_start + self.settings.shutter() / frame_interval
    }

    /// Whether the slot runs past the end of the frame interval.
    pub fn is_dropped(&self, frame_interval: f64) -> bool {
        self.slot_end(frame_interval) > 1.0 + SLOT_EPS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketState {
    pub stage: usize,
    /// Bracket order: under, mid, over, then extras.
    pub frames: Vec<Frame>,
    pub done: bool,
}

/// Index of the mid frame in [`BracketState::frames`].
pub const MID_INDEX: usize = 1;

impl BracketState {
    fn from_settings(
        stage: usize,
        under: (CaptureSettings, bool),
        mid: CaptureSettings,
        over: (CaptureSettings, bool),
        extras: &[CaptureSettings],
        frame_interval: f64,
    ) -> Self {
        let mut frames = vec![
            Frame { role: Role::Under, settings: under.0, slot_start: 0.0, clamped: under.1 },
            Frame { role: Role::Mid, settings: mid, slot_start: 0.0, clamped: false },
            Frame { role: Role::Over, settings: over.0, slot_start: 0.0, clamped: over.1 },
        ];
        frames.extend(extras.iter().map(|&s| Frame {
            role: Role::Extra,
            settings: s,
            slot_start: 0.0,
            clamped: false,
        }));
        let mut state = Self { stage, frames, done: false };
        state.layout(frame_interval);
        state
    }

    /// Assign back-to-back slots starting at `u = 0`.
    fn layout(&mut self, frame_interval: f64) {
        let mut t = 0.0;
        for f in &mut self.frames {
            f.slot_start = t;
            t += f.settings.shutter() / frame_interval;
        }
    }

    /// A finished bracket from settings in bracket order (under, mid, over,
    /// then extras), laid out back to back.
    pub fn from_schedule(settings: &[CaptureSettings], frame_interval: f64) -> Result<Self> {
        if !(3..=M_MAX).contains(&settings.len()) {
            return Err(Error::InvalidAction(format!("{} frames in a schedule", settings.len())));
        }
        let mut state = Self::from_settings(
            settings.len(),
            (settings[0], false),
            settings[1],
            (settings[2], false),
            &settings[3..],
            frame_interval,
        );
        state.done = true;
        Ok(state)
    }

    pub fn mid(&self) -> &Frame {
        &self.frames[MID_INDEX]
    }

    pub fn reference_index(&self) -> usize {
        MID_INDEX
    }

    pub fn settings(&self) -> Vec<CaptureSettings> {
        self.frames.iter().map(|f| f.settings).collect()
    }

    pub fn total_shutter(&self) -> f64 {
        self.frames.iter().map(|f| f.settings.shutter()).sum()
    }

    /// Exposure compensation of every frame relative to the mid, in stops
    /// (positive means brighter).
    pub fn offsets(&self, consts: &CameraConstants) -> Vec<f64> {
        let mid = self.mid().settings.ev(consts);
        self.frames.iter().map(|f| mid - f.settings.ev(consts)).collect()
    }

    /// Structural and stage invariants; frames pinned at the grid edge are
    /// exempt from the offset checks.
    pub fn check_invariants(&self, consts: &CameraConstants, frame_interval: f64) -> std::result::Result<(), String> {
        let mids = self.frames.iter().filter(|f| f.role == Role::Mid).count();
        if mids != 1 || self.frames.get(MID_INDEX).map(|f| f.role) != Some(Role::Mid) {
            return Err(format!("expected exactly one mid at index {MID_INDEX}"));
        }
        let roles: Vec<Role> = self.frames.iter().map(|f| f.role).collect();
        if roles.len() < 3 || roles[0] != Role::Under || roles[2] != Role::Over
            || roles[3..].iter().any(|&r| r != Role::Extra)
        {
            return Err(format!("bad role order {roles:?}"));
        }
        if self.frames.len() > M_MAX.max(3) || self.stage > M_MAX {
            return Err("bracket longer than the stage cap".into());
        }
        let mut end = 0.0;
        for f in &self.frames {
            if f.slot_start < end - SLOT_EPS || f.slot_start < 0.0 {
                return Err("overlapping capture slots".into());
            }
            end = f.slot_end(frame_interval);
        }
        let tol = grid_tolerance() + 1e-12;
        let off = self.offsets(consts);
        match self.stage {
            0 | 1 => {
                if !self.frames[0].clamped && (off[0] + 2.0).abs() > tol {
                    return Err(format!("under offset {} not -2", off[0]));
                }
                if !self.frames[2].clamped && (off[2] - 2.0).abs() > tol {
                    return Err(format!("over offset {} not +2", off[2]));
                }
            }
            2 => {
                if !self.frames[2].clamped && (off[0] + off[2]).abs() > tol {
                    return Err(format!("offsets {} / {} not symmetric", off[0], off[2]));
                }
            }
            _ => {}
        }
        if self.stage < 4 && self.frames.len() != 3 {
            return Err("extras before stage 4".into());
        }
        if self.stage >= 4 && self.frames.len() != self.stage {
            return Err("frame count does not match stage".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub iso_idx: usize,
    pub shutter_idx: usize,
    /// End the episode; legal from stage 3 on, grid indices are ignored.
    pub stop: bool,
}

impl Action {
    pub fn capture(settings: CaptureSettings) -> Self {
        Self { iso_idx: settings.iso_idx, shutter_idx: settings.shutter_idx, stop: false }
    }

    pub fn stop() -> Self {
        Self { iso_idx: 0, shutter_idx: 0, stop: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iso_idx >= NUM_ISO || self.shutter_idx >= NUM_SHUTTER {
            return Err(Error::InvalidAction(format!(
                "grid index out of range: iso {}, shutter {}",
                self.iso_idx, self.shutter_idx
            )));
        }
        Ok(())
    }

    pub fn settings(&self) -> Result<CaptureSettings> {
        self.validate()?;
        CaptureSettings::new(self.iso_idx, self.shutter_idx)
    }
}

fn nearest_with_preference(target: f64, prefer_iso: usize, consts: &CameraConstants) -> (CaptureSettings, f64) {
    let key = |s: &CaptureSettings| {
        (
            (s.ev(consts) - target).abs(),
            (s.iso_idx as i64 - prefer_iso as i64).unsigned_abs(),
            s.iso_idx,
            s.shutter_idx,
        )
    };
    let best = CaptureSettings::all()
        .min_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.partial_cmp(&kb.0).unwrap().then((ka.1, ka.2, ka.3).cmp(&(kb.1, kb.2, kb.3)))
        })
        .expect("grid is non-empty");
    let err = (best.ev(consts) - target).abs();
    (best, err)
}

/// Settings whose exposure differs from `mid` by `offset` stops (positive is
/// brighter), with the same error semantics as the grid lookup.
///
/// The mid's ISO row is used when it lands within grid tolerance; otherwise
/// the closest point of the whole grid, preferring ISOs near the mid's.
pub fn customize(mid: CaptureSettings, offset: f64, consts: &CameraConstants) -> Result<CaptureSettings> {
    let target = mid.ev(consts) - offset;
    let tol = grid_tolerance();
    match crate::camera::settings_for_ev(target, SelectionPolicy::FixedIso(mid.iso_idx), consts) {
        Ok(s) if (s.ev(consts) - target).abs() <= tol => return Ok(s),
        _ => {}
    }
    // Validates the target against the full grid span.
    crate::camera::settings_for_ev(target, SelectionPolicy::LowestIso, consts)?;
    let (s, err) = nearest_with_preference(target, mid.iso_idx, consts);
    if err <= tol {
        Ok(s)
    } else {
        // Unreachable in practice: the grid is dense enough inside its span.
        crate::camera::settings_for_ev(target, SelectionPolicy::PreferIso(mid.iso_idx), consts)
    }
}

/// Like [`customize_clamped`] but confined to the mid's ISO row, pinning to
/// the row's ends.
pub fn customize_in_row(mid: CaptureSettings, offset: f64, consts: &CameraConstants) -> (CaptureSettings, bool) {
    let target = mid.ev(consts) - offset;
    match crate::camera::settings_for_ev(target, SelectionPolicy::FixedIso(mid.iso_idx), consts) {
        Ok(s) => (s, false),
        Err(Error::EvOutOfRange { nearest, .. }) => {
            let s = crate::camera::settings_for_ev(nearest, SelectionPolicy::FixedIso(mid.iso_idx), consts)
                .expect("nearest row EV is reachable");
            (s, true)
        }
        Err(e) => unreachable!("customize on a valid mid: {e}"),
    }
}

/// Shutter time in seconds that exposes radiance `phi` to the auto-exposure
/// target at the given ISO value.
pub fn mid_gray_shutter(phi: f64, iso: f64, consts: &CameraConstants) -> f64 {
    ((AUTO_EXPOSURE_TARGET * consts.i_max() - consts.dark_offset) * consts.gain_u / (phi * iso)).max(1e-12)
}

/// [`customize`], pinning out-of-range targets to the nearest achievable
/// exposure. The flag reports whether pinning happened.
pub fn customize_clamped(mid: CaptureSettings, offset: f64, consts: &CameraConstants) -> (CaptureSettings, bool) {
    match customize(mid, offset, consts) {
        Ok(s) => (s, false),
        Err(Error::EvOutOfRange { nearest, .. }) => {
            (nearest_with_preference(nearest, mid.iso_idx, consts).0, true)
        }
        Err(e) => unreachable!("customize on a valid mid: {e}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub camera: CameraConstants,
    pub fusion: FusionConfig,
    pub reward: RewardConfig,
    /// Episode ends once this stage is reached (at most [`M_MAX`]).
    pub max_stage: usize,
    /// Root of the per-capture noise streams.
    pub noise_seed: u64,
    /// Restrict every frame to this ISO index.
    pub iso_lock: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            camera: CameraConstants::default(),
            fusion: FusionConfig::default(),
            reward: RewardConfig::default(),
            max_stage: M_MAX,
            noise_seed: 0,
            iso_lock: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.fusion.validate()?;
        self.reward.validate()?;
        if !(STOP_STAGE..=M_MAX).contains(&self.max_stage) {
            return Err(Error::InvalidConfig(format!(
                "max_stage {} outside [{STOP_STAGE}, {M_MAX}]",
                self.max_stage
            )));
        }
        if self.iso_lock.is_some_and(|i| i >= NUM_ISO) {
            return Err(Error::InvalidConfig(format!("iso_lock {:?} off the grid", self.iso_lock)));
        }
        Ok(())
    }
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the noise stream for one capture. Identical captures of the same
/// scene always see identical noise.
pub fn capture_seed(noise_seed: u64, scene_seed: u64, settings: &CaptureSettings, slot_start: f64) -> u64 {
    let mut h = splitmix(noise_seed);
    h = splitmix(h ^ scene_seed);
    h = splitmix(h ^ ((settings.iso_idx as u64) << 8 | settings.shutter_idx as u64));
    splitmix(h ^ slot_start.to_bits())
}

/// Capture every frame of `state` in its slot. Fails when the bracket does
/// not fit in one frame interval.
pub fn render_state(
    state: &BracketState,
    scene: &RadianceScene,
    consts: &CameraConstants,
    noise_seed: u64,
) -> Result<Vec<LdrImage>> {
    let budget = scene.frame_interval();
    let total = state.total_shutter();
    if total > budget * (1.0 + SLOT_EPS) {
        return Err(Error::OverBudget { total, budget });
    }
    state
        .frames
        .iter()
        .map(|f| render_frame(f, scene, consts, noise_seed))
        .collect()
}

fn render_frame(f: &Frame, scene: &RadianceScene, consts: &CameraConstants, noise_seed: u64) -> Result<LdrImage> {
    let seed = capture_seed(noise_seed, scene.spec().seed, &f.settings, f.slot_start);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    capture(scene, f.slot_start, &f.settings, consts, &mut rng)
}

/// Scoring of one state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub score: f64,
    pub fused: Arc<HdrImage>,
    pub gt: Arc<HdrImage>,
    pub ghost: Arc<Mask>,
    /// Captured frames in bracket order; `None` for frames past the interval.
    pub frames: Vec<Option<Arc<LdrImage>>>,
}

impl Evaluation {
    pub fn psnr(&self) -> Result<f64> {
        psnr_mu(&self.fused, &self.gt)
    }

    pub fn ssim(&self) -> Result<f64> {
        ssim_mu(&self.fused, &self.gt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: BracketState,
    pub action: Action,
    pub reward: f64,
    /// Score of the state reached by the action.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub scene_seed: u64,
    pub initial_score: f64,
    pub steps: Vec<StepRecord>,
    pub final_state: BracketState,
    pub final_score: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn frame_count(&self) -> usize {
        self.final_state.frames.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: BracketState,
    pub reward: f64,
    pub done: bool,
    pub score: f64,
}

type GtEntry = (Arc<HdrImage>, Arc<Mask>);

/// One scene's decision process. Captures, targets and scores are memoized,
/// which is transparent because noise is keyed on the capture itself.
pub struct Environment<'a> {
    scene: &'a RadianceScene,
    cfg: EnvConfig,
    captures: RefCell<HashMap<(CaptureSettings, u64), Arc<LdrImage>>>,
    /// Blurred radiance per (shutter index, slot start); shared across ISOs.
    blurred: RefCell<HashMap<(usize, u64), Arc<HdrImage>>>,
    targets: RefCell<HashMap<(u64, u64), GtEntry>>,
    scores: RefCell<HashMap<Vec<CaptureSettings>, Evaluation>>,
}

impl<'a> Environment<'a> {
    pub fn new(scene: &'a RadianceScene, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            scene,
            cfg,
            captures: RefCell::new(HashMap::new()),
            blurred: RefCell::new(HashMap::new()),
            targets: RefCell::new(HashMap::new()),
            scores: RefCell::new(HashMap::new()),
        })
    }

    pub fn scene(&self) -> &RadianceScene {
        self.scene
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn consts(&self) -> &CameraConstants {
        &self.cfg.camera
    }

    /// Auto-exposed ISO 200 mid with ±2-stop sides.
    pub fn reset(&self) -> Result<BracketState> {
        let consts = self.consts();
        let gt = self.scene.ground_truth_hdr(0.0)?;
        let (lo, hi) = (gt.min(), gt.max());
        let full = consts.i_max();
        let brightest = CaptureSettings::new(NUM_ISO - 1, 0)?;
        let darkest = CaptureSettings::new(0, NUM_SHUTTER - 1)?;
        let counts = |phi: f64, s: &CaptureSettings| phi * s.shutter() * consts.gain(s.iso()) + consts.dark_offset;
        if counts(hi, &brightest) < 0.5 {
            return Err(Error::DegenerateScene("too dark for any grid setting".into()));
        }
        if counts(lo, &darkest) >= full {
            return Err(Error::DegenerateScene("clips at every grid setting".into()));
        }
        let iso_idx = self.cfg.iso_lock.unwrap_or(ISO_200);
        let t = mid_gray_shutter(gt.mean(), crate::camera::ISO_GRID[iso_idx], consts);
        let shutter_idx = AUTO_MID_SHUTTERS
            .min_by(|&a, &b| {
                let da = (crate::camera::shutter_seconds(a) / t).log2().abs();
                let db = (crate::camera::shutter_seconds(b) / t).log2().abs();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .expect("range is non-empty");
        let mid = CaptureSettings::new(iso_idx, shutter_idx)?;
        Ok(self.bracket_around(mid, 0))
    }

    fn derive(&self, mid: CaptureSettings, offset: f64) -> (CaptureSettings, bool) {
        if self.cfg.iso_lock.is_some() {
            customize_in_row(mid, offset, self.consts())
        } else {
            customize_clamped(mid, offset, self.consts())
        }
    }

    fn bracket_around(&self, mid: CaptureSettings, stage: usize) -> BracketState {
        let under = self.derive(mid, -2.0);
        let over = self.derive(mid, 2.0);
        BracketState::from_settings(stage, under, mid, over, &[], self.scene.frame_interval())
    }

    /// Apply one action. Reward is the change in score minus the step penalty
    /// of the resulting frame count; stopping is free.
    pub fn step(&self, state: &BracketState, action: Action) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::EpisodeDone);
        }
        if action.stop {
            if state.stage < STOP_STAGE {
                return Err(Error::InvalidAction(format!("stop is illegal at stage {}", state.stage)));
            }
            let mut next = state.clone();
            next.done = true;
            let score = self.evaluate(state)?.score;
            return Ok(StepOutcome { state: next, reward: 0.0, done: true, score });
        }
        let chosen = action.settings()?;
        if self.cfg.iso_lock.is_some_and(|i| i != chosen.iso_idx) {
            return Err(Error::InvalidAction(format!("ISO index {} while locked", chosen.iso_idx)));
        }
        let consts = self.consts();
        let dt = self.scene.frame_interval();
        let f = &state.frames;
        let stage = state.stage + 1;
        let mut next = match state.stage {
            0 => self.bracket_around(chosen, stage),
            1 => {
                let mid = f[MID_INDEX].settings;
                let y = chosen.ev(consts) - mid.ev(consts);
                let over = self.derive(mid, y);
                BracketState::from_settings(stage, (chosen, false), mid, over, &[], dt)
            }
            2 => BracketState::from_settings(
                stage,
                (f[0].settings, f[0].clamped),
                f[MID_INDEX].settings,
                (chosen, false),
                &[],
                dt,
            ),
            _ => {
                let mut next = state.clone();
                next.stage = stage;
                next.frames.push(Frame { role: Role::Extra, settings: chosen, slot_start: 0.0, clamped: false });
                next.layout(dt);
                next
            }
        };
        let prev = self.evaluate(state)?.score;
        let score = self.evaluate(&next)?.score;
        let reward = step_reward(prev, score, next.frames.len().max(stage), &self.cfg.reward);
        next.done = stage >= self.cfg.max_stage;
        Ok(StepOutcome { done: next.done, state: next, reward, score })
    }

    /// Penalty charged by the step that produces `frames` frames.
    pub fn penalty_for(&self, frames: usize) -> f64 {
        step_penalty(frames, &self.cfg.reward)
    }

    fn capture_cached(&self, f: &Frame) -> Result<Arc<LdrImage>> {
        let key = (f.settings, f.slot_start.to_bits());
        if let Some(img) = self.captures.borrow().get(&key) {
            return Ok(img.clone());
        }
        let bkey = (f.settings.shutter_idx, f.slot_start.to_bits());
        let cached = self.blurred.borrow().get(&bkey).cloned();
        let blurred = match cached {
            Some(b) => b,
            None => {
                let b = Arc::new(simulate_blurred_hdr(self.scene, f.slot_start, f.settings.shutter())?);
                let mut cache = self.blurred.borrow_mut();
                if cache.len() >= BLUR_CACHE_LIMIT {
                    cache.clear();
                }
                cache.insert(bkey, b.clone());
                b
            }
        };
        let seed = capture_seed(self.cfg.noise_seed, self.scene.spec().seed, &f.settings, f.slot_start);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Arc::new(develop(&synthesize_noise(&blurred, &f.settings, self.consts(), &mut rng)));
        let mut cache = self.captures.borrow_mut();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, img.clone());
        Ok(img)
    }

    fn target(&self, u_ref: f64, u_end: f64) -> Result<GtEntry> {
        let key = (u_ref.to_bits(), u_end.to_bits());
        if let Some(e) = self.targets.borrow().get(&key) {
            return Ok(e.clone());
        }
        let gt = Arc::new(self.scene.ground_truth_hdr(u_ref)?);
        let ghost = Arc::new(ghost_mask(&self.scene.motion_field(0.0, u_end)?, self.cfg.reward.k));
        let mut cache = self.targets.borrow_mut();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, (gt.clone(), ghost.clone()));
        Ok((gt, ghost))
    }

    /// Captured frames of `state` in bracket order, dropping those whose slot
    /// runs past the end of the interval.
    pub fn render(&self, state: &BracketState) -> Result<Vec<Option<Arc<LdrImage>>>> {
        let dt = self.scene.frame_interval();
        state
            .frames
            .iter()
            .map(|f| if f.is_dropped(dt) { Ok(None) } else { self.capture_cached(f).map(Some) })
            .collect()
    }

    /// Fuse the captured frames around the mid and score against the scene
    /// at the mid's temporal centre. A dropped mid fuses to black.
    pub fn evaluate(&self, state: &BracketState) -> Result<Evaluation> {
        let key = state.settings();
        if let Some(e) = self.scores.borrow().get(&key) {
            return Ok(e.clone());
        }
        let dt = self.scene.frame_interval();
        let frames = self.render(state)?;
        let mid = state.mid();
        let u_ref = (mid.slot_start + 0.5 * mid.settings.shutter() / dt).min(1.0);
        let u_end = state
            .frames
            .iter()
            .filter(|f| !f.is_dropped(dt))
            .map(|f| f.slot_end(dt))
            .fold(u_ref, f64::max)
            .min(1.0);
        let (gt, ghost) = self.target(u_ref, u_end)?;
        let fused = match &frames[MID_INDEX] {
            None => Plane::new(gt.width(), gt.height()),
            Some(_) => {
                let mut captured = Vec::with_capacity(frames.len());
                let mut ref_index = 0;
                for (i, f) in frames.iter().enumerate() {
                    if let Some(img) = f {
                        if i == MID_INDEX {
                            ref_index = captured.len();
                        }
                        captured.push((**img).clone());
                    }
                }
                fuse(&captured, ref_index, self.consts(), &self.cfg.fusion)?
            }
        };
        let score = quality_score(&fused, &gt, self.scene.importance_mask(), &ghost, &self.cfg.reward)?;
        let eval = Evaluation { score, fused: Arc::new(fused), gt, ghost, frames };
        let mut cache = self.scores.borrow_mut();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, eval.clone());
        Ok(eval)
    }

    /// Play a fixed action sequence from reset, stopping early if the episode
    /// ends.
    pub fn rollout(&self, actions: &[Action]) -> Result<EpisodeTrace> {
        let mut state = self.reset()?;
        let initial_score = self.evaluate(&state)?.score;
        let mut steps = Vec::new();
        for &a in actions {
            if state.done {
                break;
            }
            let out = self.step(&state, a)?;
            steps.push(StepRecord { state: state.clone(), action: a, reward: out.reward, score: out.score });
            state = out.state;
        }
        self.finish_trace(initial_score, steps, state)
    }

    pub fn finish_trace(&self, initial_score: f64, steps: Vec<StepRecord>, state: BracketState) -> Result<EpisodeTrace> {
        let eval = self.evaluate(&state)?;
        Ok(EpisodeTrace {
            scene_seed: self.scene.spec().seed,
            initial_score,
            steps,
            final_score: eval.score,
            psnr: eval.psnr()?,
            ssim: eval.ssim()?,
            final_state: state,
        })
    }
}
