//! Window tracking on grayscale frame sequences.
//!
//! Features are chosen where the smaller eigenvalue of the windowed gradient
//! matrix is large, then followed from frame to frame by minimising the
//! time-symmetric window difference
//!
//! ```text
//! sum over w in W of [ next(x + w + d/2) - prev(x + w - d/2) ]^2
//! ```
//!
//! with Gauss-Newton steps on a Gaussian pyramid, coarse to fine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::track::{Track, TrackPoint};

/// Row-major grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("frame must have non-zero dimensions"));
        }
        if data.len() != width * height {
            return Err(Error::validation(format!(
                "frame data has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("frame intensities must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds a frame by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample, or `None` outside the pixel grid.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        self.sample_with_gradient(x, y).map(|(v, _, _)| v)
    }

    /// Bilinear sample together with the exact partial derivatives of the
    /// bilinear interpolant.
    pub fn sample_with_gradient(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        let (x0, fx) = cell(x, self.width)?;
        let (y0, fy) = cell(y, self.height)?;
        let i = y0 * self.width + x0;
        let a = self.data[i];
        let b = self.data[i + 1];
        let c = self.data[i + self.width];
        let d = self.data[i + self.width + 1];
        let top = a + fx * (b - a);
        let bottom = c + fx * (d - c);
        let v = top + fy * (bottom - top);
        let gx = (1.0 - fy) * (b - a) + fy * (d - c);
        let gy = (1.0 - fx) * (c - a) + fx * (d - b);
        Some((v, gx, gy))
    }

    /// Separable Gaussian blur with clamped borders.
    pub(crate) fn blur(&self, sigma: f64) -> Frame {
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|u| (-(u * u) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, u) in kernel.iter().zip(-radius..=radius) {
                    let xx = (x + u).clamp(0, w - 1);
                    acc += k * self.data[(y * w + xx) as usize];
                }
                tmp[(y * w + x) as usize] = acc / norm;
            }
        }
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, u) in kernel.iter().zip(-radius..=radius) {
                    let yy = (y + u).clamp(0, h - 1);
                    acc += k * tmp[(yy * w + x) as usize];
                }
                out[(y * w + x) as usize] = (acc / norm).clamp(0.0, 1.0);
            }
        }
        Frame {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    /// Keeps every second pixel; pixel `(x, y)` of the result sits at
    /// `(2x, 2y)` of the source.
    fn decimate(&self) -> Frame {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.get(2 * x, 2 * y));
            }
        }
        Frame {
            width: w,
            height: h,
            data,
        }
    }

    /// Central-difference gradient; zero on the one-pixel border.
    fn gradient_at(&self, x: usize, y: usize) -> (f64, f64) {
        if x == 0 || y == 0 || x + 1 >= self.width || y + 1 >= self.height {
            return (0.0, 0.0);
        }
        (
            0.5 * (self.get(x + 1, y) - self.get(x - 1, y)),
            0.5 * (self.get(x, y + 1) - self.get(x, y - 1)),
        )
    }
}

/// Integer cell and fractional offset for bilinear sampling along one axis.
#[inline]
fn cell(v: f64, len: usize) -> Option<(usize, f64)> {
    if !(v >= 0.0) || len < 2 {
        return None;
    }
    let last = (len - 1) as f64;
    if v > last {
        return None;
    }
    let i = v.floor();
    if i >= last {
        return Some((len - 2, 1.0));
    }
    Some((i as usize, v - i))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// The tracking window is the `(2r + 1)^2` square around a feature.
    pub window_radius: usize,
    pub max_features: usize,
    /// Minimum accepted smaller eigenvalue of the windowed gradient matrix.
    pub min_eigenvalue: f64,
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    /// Gauss-Newton stops once a step is shorter than this (pixels).
    pub convergence_eps: f64,
    /// Mean squared intensity error above which a feature is dropped.
    pub max_residual: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window_radius: 7,
            max_features: 400,
            min_eigenvalue: 0.01,
            pyramid_levels: 3,
            max_iterations: 20,
            convergence_eps: 0.01,
            max_residual: 0.02,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::validation("window_radius must be at least 1"));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::validation("pyramid_levels must be at least 1"));
        }
        if self.max_iterations < 1 {
            return Err(Error::validation("max_iterations must be at least 1"));
        }
        for (name, v) in [
            ("min_eigenvalue", self.min_eigenvalue),
            ("convergence_eps", self.convergence_eps),
            ("max_residual", self.max_residual),
        ] {
            if !(v > 0.0) {
                return Err(Error::validation(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn weight_sigma(&self) -> f64 {
        (self.window_radius as f64 / 2.0).max(1.0)
    }
}

/// A live feature inside [`run_tracker`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureState {
    pub position: (f64, f64),
    /// Number of frame transitions survived.
    pub age: usize,
    pub last_residual: f64,
}

/// Successful outcome of one tracking step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub displacement: (f64, f64),
    /// Mean squared intensity error over the window at the final displacement.
    pub residual: f64,
}

/// Why a feature could not be followed into the next frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lost {
    OutOfBounds,
    /// The iteration cap was reached while steps were still large.
    Diverged,
    /// The gradient matrix of the window is (numerically) rank deficient.
    Degenerate,
}

/// Gaussian pyramid; level 0 is the input frame.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Frame>,
}

impl Pyramid {
    pub fn build(frame: &Frame, cfg: &TrackerConfig) -> Self {
        let min_side = 2 * cfg.window_radius + 3;
        let mut levels = vec![frame.clone()];
        while levels.len() < cfg.pyramid_levels {
            let next = levels.last().unwrap().blur(1.0).decimate();
            if next.width < min_side || next.height < min_side {
                break;
            }
            levels.push(next);
        }
        Self { levels }
    }

    pub fn levels(&self) -> &[Frame] {
        &self.levels
    }
}

/// Objective value and its gradient with respect to `d` for the symmetric
/// window difference at one pyramid level. `None` if any sample leaves the
/// frame.
pub fn symmetric_ssd(
    prev: &Frame,
    next: &Frame,
    center: (f64, f64),
    d: (f64, f64),
    radius: usize,
) -> Option<(f64, (f64, f64))> {
    let r = radius as isize;
    let (mut value, mut gx, mut gy) = (0.0, 0.0, 0.0);
    for v in -r..=r {
        for u in -r..=r {
            let x = center.0 + u as f64;
            let y = center.1 + v as f64;
            let (i, ix, iy) = prev.sample_with_gradient(x - d.0 / 2.0, y - d.1 / 2.0)?;
            let (j, jx, jy) = next.sample_with_gradient(x + d.0 / 2.0, y + d.1 / 2.0)?;
            let e = j - i;
            value += e * e;
            gx += e * (jx + ix);
            gy += e * (jy + iy);
        }
    }
    Some((value, (gx, gy)))
}

struct Normal {
    h: [f64; 3],
    b: [f64; 2],
    sq_err: f64,
    count: usize,
}

fn accumulate(prev: &Frame, next: &Frame, c: (f64, f64), d: (f64, f64), r: usize) -> Option<Normal> {
    let r = r as isize;
    let mut n = Normal {
        h: [0.0; 3],
        b: [0.0; 2],
        sq_err: 0.0,
        count: 0,
    };
    for v in -r..=r {
        for u in -r..=r {
            let x = c.0 + u as f64;
            let y = c.1 + v as f64;
            let (i, ix, iy) = prev.sample_with_gradient(x - d.0 / 2.0, y - d.1 / 2.0)?;
            let (j, jx, jy) = next.sample_with_gradient(x + d.0 / 2.0, y + d.1 / 2.0)?;
            let e = j - i;
            let gx = 0.5 * (ix + jx);
            let gy = 0.5 * (iy + jy);
            n.h[0] += gx * gx;
            n.h[1] += gx * gy;
            n.h[2] += gy * gy;
            n.b[0] += gx * e;
            n.b[1] += gy * e;
            n.sq_err += e * e;
            n.count += 1;
        }
    }
    Some(n)
}

enum LevelOutcome {
    Converged((f64, f64)),
    Capped((f64, f64)),
    Failed(Lost),
}

fn refine_level(prev: &Frame, next: &Frame, c: (f64, f64), mut d: (f64, f64), cfg: &TrackerConfig) -> LevelOutcome {
    for _ in 0..cfg.max_iterations {
        let Some(n) = accumulate(prev, next, c, d, cfg.window_radius) else {
            return LevelOutcome::Failed(Lost::OutOfBounds);
        };
        let [a, b, cc] = n.h;
        let det = a * cc - b * b;
        let trace = a + cc;
        if !(det > 1e-12 * trace * trace) || trace <= 0.0 {
            return LevelOutcome::Failed(Lost::Degenerate);
        }
        let sx = -(cc * n.b[0] - b * n.b[1]) / det;
        let sy = -(a * n.b[1] - b * n.b[0]) / det;
        d = (d.0 + sx, d.1 + sy);
        if sx.hypot(sy) < cfg.convergence_eps {
            return LevelOutcome::Converged(d);
        }
    }
    LevelOutcome::Capped(d)
}

fn window_fits(frame: &Frame, c: (f64, f64), reach: f64) -> bool {
    c.0 - reach >= 0.0
        && c.1 - reach >= 0.0
        && c.0 + reach <= (frame.width - 1) as f64
        && c.1 + reach <= (frame.height - 1) as f64
}

/// Estimates the displacement of the window around `pos` from `prev` to
/// `next`.
pub fn track_step(prev: &Frame, next: &Frame, pos: (f64, f64), cfg: &TrackerConfig) -> std::result::Result<Step, Lost> {
    track_step_pyramid(&Pyramid::build(prev, cfg), &Pyramid::build(next, cfg), pos, cfg)
}

/// [`track_step`] on prebuilt pyramids.
///
/// Coarse levels whose window would leave the frame are skipped, and a
/// failure on a coarse level only discards that level's estimate. Divergence
/// and degeneracy are fatal on the finest level.
pub fn track_step_pyramid(
    prev: &Pyramid,
    next: &Pyramid,
    pos: (f64, f64),
    cfg: &TrackerConfig,
) -> std::result::Result<Step, Lost> {
    let levels = prev.levels.len().min(next.levels.len());
    let reach = cfg.window_radius as f64 + 1.0;
    let mut d = (0.0, 0.0);
    for level in (0..levels).rev() {
        let scale = (1u64 << level) as f64;
        let c = (pos.0 / scale, pos.1 / scale);
        let d_here = (d.0 / scale, d.1 / scale);
        let (p, n) = (&prev.levels[level], &next.levels[level]);
        let fits = window_fits(p, c, reach + d_here.0.hypot(d_here.1) / 2.0);
        if level > 0 {
            if fits {
                if let LevelOutcome::Converged(dl) | LevelOutcome::Capped(dl) = refine_level(p, n, c, d_here, cfg) {
                    d = (dl.0 * scale, dl.1 * scale);
                }
            }
            continue;
        }
        if !fits {
            return Err(Lost::OutOfBounds);
        }
        d = match refine_level(p, n, c, d, cfg) {
            LevelOutcome::Converged(d) => d,
            LevelOutcome::Capped(_) => return Err(Lost::Diverged),
            LevelOutcome::Failed(lost) => return Err(lost),
        };
        // The target window must carry texture of its own; otherwise the
        // prev-frame gradients alone would keep the system solvable.
        if min_eigen_bilinear(n, (c.0 + d.0 / 2.0, c.1 + d.1 / 2.0), cfg.window_radius)
            .ok_or(Lost::OutOfBounds)?
            < 1e-9
        {
            return Err(Lost::Degenerate);
        }
        let stats = accumulate(p, n, c, d, cfg.window_radius).ok_or(Lost::OutOfBounds)?;
        return Ok(Step {
            displacement: d,
            residual: stats.sq_err / stats.count as f64,
        });
    }
    unreachable!("a pyramid always has level 0")
}

fn min_eigen_bilinear(frame: &Frame, c: (f64, f64), radius: usize) -> Option<f64> {
    let r = radius as isize;
    let (mut a, mut b, mut cc) = (0.0, 0.0, 0.0);
    for v in -r..=r {
        for u in -r..=r {
            let (_, gx, gy) = frame.sample_with_gradient(c.0 + u as f64, c.1 + v as f64)?;
            a += gx * gx;
            b += gx * gy;
            cc += gy * gy;
        }
    }
    Some(min_eigenvalue(a, b, cc))
}

/// Smaller eigenvalue of the symmetric matrix `[[a, b], [b, c]]`.
#[inline]
pub fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let mean = 0.5 * (a + c);
    let half = 0.5 * (a - c);
    mean - (half * half + b * b).sqrt()
}

/// Corner score at every pixel: the smaller eigenvalue of the gradient matrix
/// summed over the window with Gaussian weights (sigma = r / 2). Pixels whose
/// window does not fit inside the gradient-defined interior score `None`.
pub fn corner_scores(frame: &Frame, cfg: &TrackerConfig) -> Result<Vec<Option<f64>>> {
    let r = cfg.window_radius;
    let (w, h) = (frame.width, frame.height);
    if w < 2 * r + 3 || h < 2 * r + 3 {
        return Err(Error::Degenerate(format!(
            "frame {w}x{h} is too small for window radius {r}"
        )));
    }
    let sigma = cfg.weight_sigma();
    let kernel: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let u = i as f64 - r as f64;
            (-u * u / (2.0 * sigma * sigma)).exp()
        })
        .collect();

    let mut prods = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = frame.gradient_at(x, y);
            prods[y * w + x] = [gx * gx, gx * gy, gy * gy];
        }
    }
    // Horizontal pass, valid for x in [r, w - r).
    let mut horiz = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in r..w - r {
            let mut acc = [0.0; 3];
            for (k, wt) in kernel.iter().enumerate() {
                let p = prods[y * w + x + k - r];
                acc[0] += wt * p[0];
                acc[1] += wt * p[1];
                acc[2] += wt * p[2];
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut scores = vec![None; w * h];
    for y in (r + 1)..(h - r - 1) {
        for x in (r + 1)..(w - r - 1) {
            let mut acc = [0.0; 3];
            for (k, wt) in kernel.iter().enumerate() {
                let p = horiz[(y + k - r) * w + x];
                acc[0] += wt * p[0];
                acc[1] += wt * p[1];
                acc[2] += wt * p[2];
            }
            scores[y * w + x] = Some(min_eigenvalue(acc[0], acc[1], acc[2]));
        }
    }
    Ok(scores)
}

/// Picks up to `max_features` well-textured positions, best first.
///
/// Candidates must reach `min_eigenvalue` and be local maxima (no 8-neighbour
/// scores higher). They are accepted greedily in descending score order
/// (row-major order on ties) while keeping at least `window_radius` pixels
/// from every accepted feature.
pub fn select_features(frame: &Frame, cfg: &TrackerConfig) -> Result<Vec<(f64, f64)>> {
    select_features_excluding(frame, cfg, &[], cfg.max_features)
}

/// [`select_features`] that also keeps clear of `occupied` positions and
/// returns at most `limit` features.
pub fn select_features_excluding(
    frame: &Frame,
    cfg: &TrackerConfig,
    occupied: &[(f64, f64)],
    limit: usize,
) -> Result<Vec<(f64, f64)>> {
    let scores = corner_scores(frame, cfg)?;
    let w = frame.width;
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for (i, s) in scores.iter().enumerate() {
        let Some(s) = *s else { continue };
        if s < cfg.min_eigenvalue {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let is_peak = (-1isize..=1).all(|dy| {
            (-1isize..=1).all(|dx| {
                let j = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                scores[j].map_or(true, |n| n <= s)
            })
        });
        if is_peak {
            candidates.push((s, i));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let min_sep = cfg.window_radius as f64;
    let mut taken: Vec<(f64, f64)> = Vec::new();
    for (_, i) in candidates {
        if taken.len() >= limit {
            break;
        }
        let p = ((i % w) as f64, (i / w) as f64);
        let clear = |q: &(f64, f64)| (p.0 - q.0).hypot(p.1 - q.1) >= min_sep;
        if taken.iter().all(clear) && occupied.iter().all(clear) {
            taken.push(p);
        }
    }
    Ok(taken)
}

struct LiveFeature {
    id: usize,
    state: FeatureState,
    points: Vec<TrackPoint>,
}

/// Tracks features through a frame sequence and returns one track per
/// feature lifetime, ordered by birth. Track ids are zero-padded counters.
pub fn run_tracker(frames: &[Frame], cfg: &TrackerConfig) -> Result<Vec<Track>> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::validation("tracking needs at least two frames"));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    if let Some((i, _)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.width != w || f.height != h)
    {
        return Err(Error::validation(format!(
            "frame {i} has different dimensions from frame 0"
        )));
    }
    let margin = cfg.window_radius as f64;
    let inside = |p: (f64, f64)| {
        p.0 >= margin && p.1 >= margin && p.0 <= (w - 1) as f64 - margin && p.1 <= (h - 1) as f64 - margin
    };

    let mut next_id = 0usize;
    let mut finished: Vec<(usize, Vec<TrackPoint>)> = Vec::new();
    let mut live: Vec<LiveFeature> = Vec::new();
    let spawn = |positions: Vec<(f64, f64)>, frame: u64, next_id: &mut usize, live: &mut Vec<LiveFeature>| {
        for p in positions {
            live.push(LiveFeature {
                id: *next_id,
                state: FeatureState {
                    position: p,
                    age: 0,
                    last_residual: 0.0,
                },
                points: vec![TrackPoint::new(frame, p.0, p.1)],
            });
            *next_id += 1;
        }
    };

    spawn(select_features(&frames[0], cfg)?, 0, &mut next_id, &mut live);
    let mut prev_pyr = Pyramid::build(&frames[0], cfg);
    for (t, frame) in frames.iter().enumerate().skip(1) {
        let next_pyr = Pyramid::build(frame, cfg);
        let steps = par::map(&live, |f| track_step_pyramid(&prev_pyr, &next_pyr, f.state.position, cfg));
        let mut survivors = Vec::with_capacity(live.len());
        for (mut f, step) in live.into_iter().zip(steps) {
            let moved = step.ok().and_then(|s| {
                let p = (f.state.position.0 + s.displacement.0, f.state.position.1 + s.displacement.1);
                (s.residual <= cfg.max_residual && inside(p)).then_some((p, s.residual))
            });
            match moved {
                Some((p, residual)) => {
                    f.state = FeatureState {
                        position: p,
                        age: f.state.age + 1,
                        last_residual: residual,
                    };
                    f.points.push(TrackPoint::new(t as u64, p.0, p.1));
                    survivors.push(f);
                }
                None => finished.push((f.id, f.points)),
            }
        }
        live = survivors;
        let room = cfg.max_features.saturating_sub(live.len());
        if room > 0 {
            let occupied: Vec<_> = live.iter().map(|f| f.state.position).collect();
            let fresh = select_features_excluding(frame, cfg, &occupied, room)?;
            spawn(fresh, t as u64, &mut next_id, &mut live);
        }
        prev_pyr = next_pyr;
    }
    finished.extend(live.into_iter().map(|f| (f.id, f.points)));
    finished.sort_by_key(|(id, _)| *id);
    finished
        .into_iter()
        .map(|(id, points)| Track::new(format!("{id:06}"), points))
        .collect()
}
