//! Procedural dynamic HDR scenes.
//!
//! A scene is a static background radiance field plus a stack of sprites that
//! move along piecewise-linear trajectories over one frame interval. Time is
//! normalized: `u = 0` is the start of the interval and `u = 1` its end, which
//! lies `frame_interval` seconds later. Because every sprite position is known
//! in closed form, sub-frame radiance and motion fields are exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mask, Plane, RadianceFrame};

/// Default frame interval in seconds (one 30 fps video frame).
pub const DEFAULT_FRAME_INTERVAL: f64 = 1.0 / 30.0;

/// Default desk-scale resolution.
pub const DEFAULT_RESOLUTION: usize = 128;

const MAX_OBJECTS: usize = 16;

/// Parameters from which a scene is generated deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// log2 of the ratio between brightest and darkest radiance.
    pub dynamic_range_stops: f64,
    pub object_count: usize,
    /// Object travel in pixels per frame interval.
    pub motion_magnitude: f64,
    pub static_flag: bool,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            width: DEFAULT_RESOLUTION,
            height: DEFAULT_RESOLUTION,
            dynamic_range_stops: 10.0,
            object_count: 2,
            motion_magnitude: 20.0,
            static_flag: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidSpec(format!(
                "resolution {}x{} below 16x16",
                self.width, self.height
            )));
        }
        if !(4.0..=20.0).contains(&self.dynamic_range_stops) {
            return Err(Error::InvalidSpec(format!(
                "dynamic range {} stops outside [4, 20]",
                self.dynamic_range_stops
            )));
        }
        if !self.motion_magnitude.is_finite() || self.motion_magnitude < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "motion magnitude {} must be finite and >= 0",
                self.motion_magnitude
            )));
        }
        if self.object_count > MAX_OBJECTS {
            return Err(Error::InvalidSpec(format!(
                "{} objects exceeds the limit of {MAX_OBJECTS}",
                self.object_count
            )));
        }
        Ok(())
    }

    /// Motion actually applied: zero for static scenes.
    pub fn effective_motion(&self) -> f64 {
        if self.static_flag {
            0.0
        } else {
            self.motion_magnitude
        }
    }
}

/// Piecewise-linear path of a sprite's top-left corner over normalized time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    knots: Vec<(f64, [f64; 2])>,
}

impl Trajectory {
    pub fn stationary(pos: [f64; 2]) -> Self {
        Self {
            knots: vec![(0.0, pos), (1.0, pos)],
        }
    }

    pub fn linear(start: [f64; 2], end: [f64; 2]) -> Self {
        Self {
            knots: vec![(0.0, start), (1.0, end)],
        }
    }

    /// Knots must start at `u = 0`, end at `u = 1` and increase strictly.
    pub fn from_knots(knots: Vec<(f64, [f64; 2])>) -> Result<Self> {
        let ok = knots.len() >= 2
            && knots[0].0 == 0.0
            && knots[knots.len() - 1].0 == 1.0
            && knots.windows(2).all(|w| w[1].0 > w[0].0)
            && knots
                .iter()
                .all(|(_, p)| p[0].is_finite() && p[1].is_finite());
        if !ok {
            return Err(Error::InvalidSpec(
                "trajectory knots must span [0, 1] with increasing times".into(),
            ));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, [f64; 2])] {
        &self.knots
    }

    pub fn position(&self, u: f64) -> [f64; 2] {
        let u = u.clamp(0.0, 1.0);
        let seg = self
            .knots
            .windows(2)
            .find(|w| u <= w[1].0)
            .unwrap_or(&self.knots[self.knots.len() - 2..]);
        let (u0, p0) = seg[0];
        let (u1, p1) = seg[1];
        let t = (u - u0) / (u1 - u0);
        [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])]
    }

    pub fn displacement(&self, u0: f64, u1: f64) -> [f64; 2] {
        let a = self.position(u0);
        let b = self.position(u1);
        [b[0] - a[0], b[1] - a[1]]
    }

    /// Largest distance from the starting position over the path.
    pub fn max_displacement(&self) -> f64 {
        let start = self.knots[0].1;
        self.knots
            .iter()
            .map(|(_, p)| ((p[0] - start[0]).powi(2) + (p[1] - start[1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }
}

/// A radiance patch with coverage, composited with bilinear resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    width: usize,
    height: usize,
    /// Radiance multiplied by coverage.
    premultiplied: Vec<f64>,
    alpha: Vec<f64>,
}

impl Sprite {
    pub fn new(width: usize, height: usize, radiance: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if radiance.len() != width * height || alpha.len() != width * height {
            return Err(Error::Geometry("sprite buffers do not match its size".into()));
        }
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a))
            || radiance.iter().any(|r| !r.is_finite() || *r < 0.0)
        {
            return Err(Error::InvalidSpec(
                "sprite radiance must be finite >= 0 and alpha in [0, 1]".into(),
            ));
        }
        let premultiplied = radiance.iter().zip(&alpha).map(|(r, a)| r * a).collect();
        Ok(Self {
            width,
            height,
            premultiplied,
            alpha,
        })
    }

    /// Fully opaque rectangle of constant radiance.
    pub fn solid(width: usize, height: usize, radiance: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![radiance; width * height],
            vec![1.0; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingObject {
    pub sprite: Sprite,
    pub trajectory: Trajectory,
}

/// Bilinear placement of a sprite at a fractional offset.
///
/// Writing the offset as `k + f` with integer `k`, the resampled value at
/// pixel `x` is `(1 - f) * P[x - k] + f * P[x - k - 1]`, which moves the mass
/// centroid of the patch by exactly the offset.
struct Placement {
    kx: i64,
    ky: i64,
    wx: [f64; 2],
    wy: [f64; 2],
}

impl Placement {
    fn new(pos: [f64; 2]) -> Self {
        let fx = pos[0].floor();
        let fy = pos[1].floor();
        let ax = pos[0] - fx;
        let ay = pos[1] - fy;
        Self {
            kx: fx as i64,
            ky: fy as i64,
            wx: [1.0 - ax, ax],
            wy: [1.0 - ay, ay],
        }
    }

    /// Visible pixel range `[x0, x1) x [y0, y1)` touched by the sprite.
    fn bounds(&self, sprite: &Sprite, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let x0 = self.kx.max(0);
        let y0 = self.ky.max(0);
        let x1 = (self.kx + sprite.width as i64 + 1).min(width as i64);
        let y1 = (self.ky + sprite.height as i64 + 1).min(height as i64);
        if x0 >= x1 || y0 >= y1 {
            return None;
        }
        Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
    }

    /// Resampled `(premultiplied radiance, alpha)` at pixel `(x, y)`.
    #[inline]
    fn sample(&self, sprite: &Sprite, x: usize, y: usize) -> (f64, f64) {
        let sx = x as i64 - self.kx;
        let sy = y as i64 - self.ky;
        if sx >= 1 && sy >= 1 && sx < sprite.width as i64 && sy < sprite.height as i64 {
            // All four taps inside the sprite; same summation order as below.
            let i0 = sy as usize * sprite.width + sx as usize;
            let i1 = i0 - sprite.width;
            let w = [
                self.wx[0] * self.wy[0],
                self.wx[1] * self.wy[0],
                self.wx[0] * self.wy[1],
                self.wx[1] * self.wy[1],
            ];
            let idx = [i0, i0 - 1, i1, i1 - 1];
            let mut q = 0.0;
            let mut a = 0.0;
            for k in 0..4 {
                if w[k] != 0.0 {
                    q += w[k] * sprite.premultiplied[idx[k]];
                    a += w[k] * sprite.alpha[idx[k]];
                }
            }
            return (q, a);
        }
        let mut q = 0.0;
        let mut a = 0.0;
        for (dy, wy) in self.wy.iter().enumerate() {
            if *wy == 0.0 {
                continue;
            }
            let sy = y as i64 - self.ky - dy as i64;
            if sy < 0 || sy >= sprite.height as i64 {
                continue;
            }
            for (dx, wx) in self.wx.iter().enumerate() {
                if *wx == 0.0 {
                    continue;
                }
                let sx = x as i64 - self.kx - dx as i64;
                if sx < 0 || sx >= sprite.width as i64 {
                    continue;
                }
                let idx = sy as usize * sprite.width + sx as usize;
                let w = wx * wy;
                q += w * sprite.premultiplied[idx];
                a += w * sprite.alpha[idx];
            }
        }
        (q, a)
    }
}

/// A generated scene. Immutable after construction and safe to share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadianceScene {
    spec: SceneSpec,
    background: Plane,
    objects: Vec<MovingObject>,
    frame_interval: f64,
    importance: Mask,
}

/// Motion of every pixel between two sample times, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub dx: Plane,
    pub dy: Plane,
}

impl MotionField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            dx: Plane::new(width, height),
            dy: Plane::new(width, height),
        }
    }

    pub fn width(&self) -> usize {
        self.dx.width()
    }

    pub fn height(&self) -> usize {
        self.dx.height()
    }

    pub fn at(&self, x: usize, y: usize) -> [f64; 2] {
        [self.dx.get(x, y), self.dy.get(x, y)]
    }

    pub fn magnitude(&self) -> Plane {
        Plane::from_fn(self.width(), self.height(), |x, y| {
            self.dx.get(x, y).hypot(self.dy.get(x, y))
        })
    }

    pub fn is_zero(&self) -> bool {
        self.dx.data().iter().chain(self.dy.data()).all(|v| *v == 0.0)
    }
}

fn check_time(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange(u))
    }
}

impl RadianceScene {
    /// Assemble a scene from explicit parts; used for hand-built test scenes.
    pub fn from_parts(
        spec: SceneSpec,
        background: Plane,
        objects: Vec<MovingObject>,
        frame_interval: f64,
        importance: Mask,
    ) -> Result<Self> {
        if background.width() != spec.width || background.height() != spec.height {
            return Err(Error::Geometry("background does not match the spec".into()));
        }
        background.ensure_same_geometry(&importance)?;
        if background.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSpec("background radiance must be finite and >= 0".into()));
        }
        if importance.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidSpec("importance weights must lie in [0, 1]".into()));
        }
        if !importance.data().iter().any(|v| *v > 0.0) {
            return Err(Error::InvalidSpec("importance mask is empty".into()));
        }
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(Error::InvalidSpec(format!("frame interval {frame_interval}")));
        }
        Ok(Self {
            spec,
            background,
            objects,
            frame_interval,
            importance,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn background(&self) -> &Plane {
        &self.background
    }

    pub fn objects(&self) -> &[MovingObject] {
        &self.objects
    }

    /// Seconds between `u = 0` and `u = 1`.
    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    pub fn with_frame_interval(mut self, frame_interval: f64) -> Result<Self> {
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(Error::InvalidSpec(format!("frame interval {frame_interval}")));
        }
        self.frame_interval = frame_interval;
        Ok(self)
    }

    pub fn is_static(&self) -> bool {
        self.objects
            .iter()
            .all(|o| o.trajectory.max_displacement() == 0.0)
    }

    /// Exact composite of background and sprites at normalized time `u`.
    pub fn sample_radiance(&self, u: f64) -> Result<RadianceFrame> {
        check_time(u)?;
        let mut frame = self.background.clone();
        for obj in &self.objects {
            self.composite(obj, u, &mut frame);
        }
        Ok(frame)
    }

    /// Ground-truth radiance used as the scoring target; same values as
    /// [`Self::sample_radiance`].
    pub fn ground_truth_hdr(&self, u: f64) -> Result<RadianceFrame> {
        self.sample_radiance(u)
    }

    /// Composite only inside the sprites' footprint, writing into `frame`
    /// which must already hold this scene's background or an earlier composite.
    fn composite(&self, obj: &MovingObject, u: f64, frame: &mut Plane) {
        let placement = Placement::new(obj.trajectory.position(u));
        let Some((x0, x1, y0, y1)) = placement.bounds(&obj.sprite, self.width(), self.height())
        else {
            return;
        };
        for y in y0..y1 {
            for x in x0..x1 {
                let (q, a) = placement.sample(&obj.sprite, x, y);
                if a == 0.0 && q == 0.0 {
                    continue;
                }
                let under = frame.get(x, y);
                frame.set(x, y, under * (1.0 - a) + q);
            }
        }
    }

    /// Union bounding box of every sprite at time `u`, as `[x0, x1) x [y0, y1)`.
    pub fn object_bounds(&self, u: f64) -> Option<(usize, usize, usize, usize)> {
        let mut acc: Option<(usize, usize, usize, usize)> = None;
        for obj in &self.objects {
            let placement = Placement::new(obj.trajectory.position(u));
            if let Some(b) = placement.bounds(&obj.sprite, self.width(), self.height()) {
                acc = Some(match acc {
                    None => b,
                    Some(a) => (a.0.min(b.0), a.1.max(b.1), a.2.min(b.2), a.3.max(b.3)),
                });
            }
        }
        acc
    }

    /// Composite restricted to `[x0, x1) x [y0, y1)`, written as a dense
    /// patch; pixels outside every sprite equal the background.
    pub fn sample_region(&self, u: f64, region: (usize, usize, usize, usize)) -> Vec<f64> {
        let (x0, x1, y0, y1) = region;
        let w = x1 - x0;
        let mut patch = Vec::with_capacity(w * (y1 - y0));
        for y in y0..y1 {
            for x in x0..x1 {
                patch.push(self.background.get(x, y));
            }
        }
        for obj in &self.objects {
            let placement = Placement::new(obj.trajectory.position(u));
            let Some((bx0, bx1, by0, by1)) =
                placement.bounds(&obj.sprite, self.width(), self.height())
            else {
                continue;
            };
            for y in by0.max(y0)..by1.min(y1) {
                for x in bx0.max(x0)..bx1.min(x1) {
                    let (q, a) = placement.sample(&obj.sprite, x, y);
                    if a == 0.0 && q == 0.0 {
                        continue;
                    }
                    let idx = (y - y0) * w + (x - x0);
                    patch[idx] = patch[idx] * (1.0 - a) + q;
                }
            }
        }
        patch
    }

    /// Displacement of each pixel's content between `u0` and `u1`.
    ///
    /// A pixel belongs to the topmost sprite whose resampled coverage at `u0`
    /// is at least one half; background pixels do not move.
    pub fn motion_field(&self, u0: f64, u1: f64) -> Result<MotionField> {
        check_time(u0)?;
        check_time(u1)?;
        if u0 > u1 {
            return Err(Error::ReversedInterval(u0, u1));
        }
        let mut field = MotionField::zeros(self.width(), self.height());
        for obj in &self.objects {
            let d = obj.trajectory.displacement(u0, u1);
            let placement = Placement::new(obj.trajectory.position(u0));
            let Some((x0, x1, y0, y1)) =
                placement.bounds(&obj.sprite, self.width(), self.height())
            else {
                continue;
            };
            for y in y0..y1 {
                for x in x0..x1 {
                    let (_, a) = placement.sample(&obj.sprite, x, y);
                    if a >= 0.5 {
                        field.dx.set(x, y, d[0]);
                        field.dy.set(x, y, d[1]);
                    }
                }
            }
        }
        Ok(field)
    }

    /// Authored importance weights in `[0, 1]`.
    pub fn importance_mask(&self) -> &Mask {
        &self.importance
    }

    /// log2(max / min positive radiance) of the frame at `u`.
    pub fn realized_dynamic_range(&self, u: f64) -> Result<f64> {
        let frame = self.sample_radiance(u)?;
        let max = frame.max();
        let min = frame
            .data()
            .iter()
            .copied()
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        Ok((max / min).log2())
    }
}

/// Build a scene from its spec. Deterministic in `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<RadianceScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let wf = w as f64;
    let hf = h as f64;

    // Low-frequency layout in arbitrary log units.
    let gx: f64 = rng.gen_range(-1.0..1.0);
    let gy: f64 = rng.gen_range(-1.0..1.0);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..wf),
                rng.gen_range(0.0..hf),
                rng.gen_range(0.1..0.35) * wf.min(hf),
            )
        })
        .collect();
    let gratings: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.gen_range(4.0..16.0) * std::f64::consts::TAU / wf,
                rng.gen_range(0.0..std::f64::consts::PI),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    // A bright window (light source / sky) that carries the peak radiance.
    let win_w = (rng.gen_range(0.15..0.3) * wf).round().max(2.0) as usize;
    let win_h = (rng.gen_range(0.15..0.3) * hf).round().max(2.0) as usize;
    let win_x = rng.gen_range(0..=w - win_w);
    let win_y = rng.gen_range(0..=h - win_h);

    let mut field = Plane::from_fn(w, h, |x, y| {
        let xf = x as f64;
        let yf = y as f64;
        let mut v = gx * xf / wf + gy * yf / hf;
        for &(amp, cx, cy, sigma) in &blobs {
            let r2 = (xf - cx).powi(2) + (yf - cy).powi(2);
            v += amp * (-r2 / (2.0 * sigma * sigma)).exp();
        }
        for &(freq, theta, phase) in &gratings {
            v += 0.08 * (freq * (xf * theta.cos() + yf * theta.sin()) + phase).sin();
        }
        if (win_x..win_x + win_w).contains(&x) && (win_y..win_y + win_h).contains(&y) {
            v += 3.0 + 0.05 * ((xf * 0.9).sin() + (yf * 1.3).cos());
        }
        v
    });
    let (lo, hi) = (field.min(), field.max());
    for v in field.data_mut() {
        *v = (*v - lo) / (hi - lo);
    }

    let stops = spec.dynamic_range_stops;
    // Scene key: mean radiance, log-uniform across the exposable range.
    let key = 2f64.powf(rng.gen_range(13.0..19.0));
    let unit_mean = field.data().iter().map(|n| (n * stops).exp2()).sum::<f64>() / (w * h) as f64;
    let floor = key / unit_mean;
    let to_radiance = |n: f64| floor * (n.clamp(0.0, 1.0) * stops).exp2();
    let background = field.map(to_radiance);

    let motion = spec.effective_motion();
    let min_side = wf.min(hf);
    let mut objects = Vec::with_capacity(spec.object_count);
    let mut importance = Plane::new(w, h);
    for _ in 0..spec.object_count {
        let sw = ((rng.gen_range(0.08..0.2) * min_side).round() as usize).max(3);
        let sh = ((rng.gen_range(0.08..0.2) * min_side).round() as usize).max(3);
        let level: f64 = rng.gen_range(0.25..1.0);
        let stripe_freq: f64 = rng.gen_range(0.4..1.2);
        let mut radiance = Vec::with_capacity(sw * sh);
        for y in 0..sh {
            for x in 0..sw {
                let t = 0.15 * ((x as f64 + 0.5 * y as f64) * stripe_freq).sin();
                radiance.push(to_radiance(level + t));
            }
        }
        let sprite = Sprite::new(sw, sh, radiance, vec![1.0; sw * sh])?;

        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let d = [motion * angle.cos(), motion * angle.sin()];
        let cx = rng.gen_range(0.25..0.75) * wf;
        let cy = rng.gen_range(0.25..0.75) * hf;
        let start = [
            cx - d[0] / 2.0 - sw as f64 / 2.0,
            cy - d[1] / 2.0 - sh as f64 / 2.0,
        ];
        let end = [start[0] + d[0], start[1] + d[1]];
        let trajectory = if motion == 0.0 {
            Trajectory::stationary(start)
        } else {
            Trajectory::linear(start, end)
        };

        // Swept footprint: the path is straight, so the box over both ends covers it.
        let bx0 = start[0].min(end[0]).floor().max(0.0) as usize;
        let by0 = start[1].min(end[1]).floor().max(0.0) as usize;
        let bx1 = ((start[0].max(end[0]) + sw as f64 + 1.0).ceil() as usize).min(w);
        let by1 = ((start[1].max(end[1]) + sh as f64 + 1.0).ceil() as usize).min(h);
        for y in by0..by1 {
            for x in bx0..bx1 {
                importance.set(x, y, 1.0);
            }
        }
        objects.push(MovingObject { sprite, trajectory });
    }

    // Brightest background region.
    let (mut bx, mut by, mut best) = (0, 0, f64::NEG_INFINITY);
    for y in 0..h {
        for x in 0..w {
            let v = background.get(x, y);
            if v > best {
                best = v;
                bx = x;
                by = y;
            }
        }
    }
    let half = (w.min(h) / 16).max(2);
    for y in by.saturating_sub(half)..(by + half).min(h) {
        for x in bx.saturating_sub(half)..(bx + half).min(w) {
            importance.set(x, y, 1.0);
        }
    }

    RadianceScene::from_parts(
        spec.clone(),
        background,
        objects,
        DEFAULT_FRAME_INTERVAL,
        importance,
    )
}
