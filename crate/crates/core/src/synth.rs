//! Synthetic inputs: smooth textures for tracker checks and "corridor world",
//! a small fixed-camera scene with known walking paths.
//!
//! Corridor world (640x480) has two paths, each walked in both directions:
//!
//! * path A is L-shaped: east along `y = 340` from `x = 60` to a corner at
//!   `(440, 340)`, then north to `(440, 60)`. Every walker on A turns at the
//!   corner, so sharp turns there are normal for this scene.
//! * path B runs straight north-south along `x = 250` and crosses A's
//!   horizontal leg.
//!
//! Generated tracks keep a per-track lateral lane offset, a per-track speed
//! and small per-point noise. All generators are deterministic in their seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::track::Track;
use crate::tracker::Frame;

/// Smooth random texture in [0.05, 0.95]: white noise blurred with `sigma`.
pub fn smooth_texture(width: usize, height: usize, sigma: f64, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..width * height).map(|_| rng.random::<f64>()).collect();
    let blurred = Frame::new(width, height, noise).expect("noise in [0,1]").blur(sigma);
    let (lo, hi) = blurred
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1e-12);
    let data = blurred
        .data()
        .iter()
        .map(|v| 0.05 + 0.9 * (v - lo) / span)
        .collect();
    Frame::new(width, height, data).expect("rescaled texture")
}

/// `out(x, y) = frame(x - dx, y - dy)` by bilinear interpolation, with
/// coordinates clamped to the frame.
pub fn shifted(frame: &Frame, dx: f64, dy: f64) -> Frame {
    let (w, h) = (frame.width(), frame.height());
    Frame::from_fn(w, h, |x, y| {
        let sx = (x as f64 - dx).clamp(0.0, (w - 1) as f64);
        let sy = (y as f64 - dy).clamp(0.0, (h - 1) as f64);
        frame.sample(sx, sy).expect("clamped sample")
    })
    .expect("interpolated values stay in range")
}

/// A textured square gliding over a flat background.
///
/// The patch's top-left corner is at `origin + t * velocity` in frame `t`.
/// With `occlude_from = Some(k)`, a flat block is painted over the patch's
/// remaining path from frame `k` on.
pub fn moving_patch(
    size: (usize, usize),
    patch: usize,
    origin: (f64, f64),
    velocity: (f64, f64),
    frames: usize,
    occlude_from: Option<usize>,
    seed: u64,
) -> Vec<Frame> {
    let tex = smooth_texture(patch + 2, patch + 2, 1.5, seed);
    let (w, h) = size;
    (0..frames)
        .map(|t| {
            let ox = origin.0 + t as f64 * velocity.0;
            let oy = origin.1 + t as f64 * velocity.1;
            let occluded = occlude_from.is_some_and(|k| t >= k);
            let (bx, by) = match occlude_from {
                Some(k) => (origin.0 + k as f64 * velocity.0 - 6.0, origin.1 - 6.0),
                None => (f64::INFINITY, f64::INFINITY),
            };
            Frame::from_fn(w, h, |x, y| {
                let (xf, yf) = (x as f64, y as f64);
                if occluded && xf >= bx && yf >= by && yf <= by + patch as f64 + 12.0 {
                    return 0.5;
                }
                let (u, v) = (xf - ox, yf - oy);
                if u >= 0.0 && v >= 0.0 && u <= patch as f64 && v <= patch as f64 {
                    tex.sample(u + 1.0, v + 1.0).unwrap_or(0.5)
                } else {
                    0.5
                }
            })
            .expect("patch frame")
        })
        .collect()
}

pub const WORLD_SIZE: (usize, usize) = (640, 480);
pub const PATH_A: [(f64, f64); 3] = [(60.0, 340.0), (440.0, 340.0), (440.0, 60.0)];
pub const PATH_B: [(f64, f64); 2] = [(250.0, 40.0), (250.0, 450.0)];

/// Generator for corridor-world tracks.
#[derive(Debug, Clone)]
pub struct CorridorWorld {
    /// Standard deviation of the per-track lane offset (pixels).
    pub lane_sigma: f64,
    /// Standard deviation of the per-point position noise (pixels).
    pub point_noise: f64,
    /// Mean walking speed (pixels per frame).
    pub speed: f64,
    /// Fraction of normal tracks that are fragments rather than full walks.
    pub fragment_fraction: f64,
    /// Fraction of normal tracks on path A.
    pub path_a_fraction: f64,
}

impl Default for CorridorWorld {
    fn default() -> Self {
        Self {
            lane_sigma: 3.0,
            point_noise: 0.3,
            speed: 2.0,
            fragment_fraction: 0.3,
            path_a_fraction: 0.55,
        }
    }
}

/// Polyline helpers on `(x, y)` vertices.
fn seg_len(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.0 - a.0).hypot(b.1 - a.1)
}

fn polyline_len(pts: &[(f64, f64)]) -> f64 {
    pts.windows(2).map(|w| seg_len(w[0], w[1])).sum()
}

/// Point at arc length `s` along a polyline (clamped to its ends).
fn point_at(pts: &[(f64, f64)], mut s: f64) -> (f64, f64) {
    for w in pts.windows(2) {
        let l = seg_len(w[0], w[1]);
        if s <= l {
            let t = if l > 0.0 { s / l } else { 0.0 };
            return (w[0].0 + t * (w[1].0 - w[0].0), w[0].1 + t * (w[1].1 - w[0].1));
        }
        s -= l;
    }
    *pts.last().expect("non-empty polyline")
}

/// Parallel polyline at signed distance `offset` (left-hand normal), with
/// mitred joints.
fn offset_polyline(pts: &[(f64, f64)], offset: f64) -> Vec<(f64, f64)> {
    let normal = |a: (f64, f64), b: (f64, f64)| {
        let l = seg_len(a, b);
        (-(b.1 - a.1) / l, (b.0 - a.0) / l)
    };
    let n = pts.len();
    (0..n)
        .map(|i| {
            let p = pts[i];
            if i == 0 || i == n - 1 {
                let (a, b) = if i == 0 { (pts[0], pts[1]) } else { (pts[n - 2], pts[n - 1]) };
                let nv = normal(a, b);
                return (p.0 + offset * nv.0, p.1 + offset * nv.1);
            }
            let n1 = normal(pts[i - 1], p);
            let n2 = normal(p, pts[i + 1]);
            let m = (n1.0 + n2.0, n1.1 + n2.1);
            let cos = 1.0 + n1.0 * n2.0 + n1.1 * n2.1;
            (p.0 + offset * m.0 / cos, p.1 + offset * m.1 / cos)
        })
        .collect()
}

/// Samples the polyline every `speed` pixels of arc length (plus the end
/// point) and adds isotropic point noise.
fn walk(pts: &[(f64, f64)], speed: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let total = polyline_len(pts);
    let jitter = Normal::new(0.0, noise.max(1e-12)).expect("valid sigma");
    let steps = (total / speed).floor() as usize;
    let mut out: Vec<(f64, f64)> = (0..=steps)
        .map(|i| {
            let p = point_at(pts, i as f64 * speed);
            (p.0 + jitter.sample(rng), p.1 + jitter.sample(rng))
        })
        .collect();
    if total - steps as f64 * speed > 0.25 * speed {
        let p = *pts.last().unwrap();
        out.push((p.0 + jitter.sample(rng), p.1 + jitter.sample(rng)));
    }
    out
}

/// Sub-polyline between arc lengths `s0 < s1`.
fn sub_polyline(pts: &[(f64, f64)], s0: f64, s1: f64) -> Vec<(f64, f64)> {
    let mut out = vec![point_at(pts, s0)];
    let mut acc = 0.0;
    for w in pts.windows(2) {
        acc += seg_len(w[0], w[1]);
        if acc > s0 && acc < s1 {
            out.push(w[1]);
        }
    }
    out.push(point_at(pts, s1));
    out
}

fn reversed(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    pts.iter().rev().copied().collect()
}

impl CorridorWorld {
    fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    fn lane(&self, rng: &mut ChaCha8Rng) -> f64 {
        let n = Normal::new(0.0, self.lane_sigma.max(1e-12)).expect("valid sigma");
        n.sample(rng).clamp(-3.0 * self.lane_sigma, 3.0 * self.lane_sigma)
    }

    fn speed(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.speed * rng.random_range(0.85..1.15)
    }

    fn to_track(&self, id: String, xy: &[(f64, f64)]) -> Track {
        Track::from_xy(id, xy).expect("generated tracks are valid")
    }

    fn normal_path(&self, on_a: bool, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
        let base: Vec<(f64, f64)> = if on_a { PATH_A.to_vec() } else { PATH_B.to_vec() };
        let lane = self.lane(rng);
        let path = offset_polyline(&base, lane);
        let total = polyline_len(&path);
        let (s0, s1) = if rng.random::<f64>() < self.fragment_fraction {
            let len = rng.random_range(150.0..total);
            let s0 = rng.random_range(0.0..=(total - len));
            (s0, s0 + len)
        } else {
            (rng.random_range(0.0..30.0), total - rng.random_range(0.0..30.0))
        };
        let sub = sub_polyline(&path, s0, s1);
        if rng.random::<bool>() {
            reversed(&sub)
        } else {
            sub
        }
    }

    /// Ordinary walkers on both paths, in both directions.
    pub fn normal_tracks(&self, n: usize, seed: u64, prefix: &str) -> Vec<Track> {
        let mut rng = Self::rng(seed, 1);
        (0..n)
            .map(|i| {
                let on_a = rng.random::<f64>() < self.path_a_fraction;
                let poly = self.normal_path(on_a, &mut rng);
                let speed = self.speed(&mut rng);
                let xy = walk(&poly, speed, self.point_noise, &mut rng);
                self.to_track(format!("{prefix}{i:06}"), &xy)
            })
            .collect()
    }

    /// Path-A walkers that pass the corner, i.e. turn where the scene makes
    /// walkers turn.
    pub fn corner_tracks(&self, n: usize, seed: u64, prefix: &str) -> Vec<Track> {
        let mut rng = Self::rng(seed, 2);
        (0..n)
            .map(|i| {
                let path = offset_polyline(&PATH_A, self.lane(&mut rng));
                let corner = seg_len(PATH_A[0], PATH_A[1]);
                let total = polyline_len(&path);
                let s0 = rng.random_range(0.0..(corner - 150.0));
                let s1 = rng.random_range((corner + 150.0)..total);
                let mut poly = sub_polyline(&path, s0, s1);
                if rng.random::<bool>() {
                    poly = reversed(&poly);
                }
                let speed = self.speed(&mut rng);
                let xy = walk(&poly, speed, self.point_noise, &mut rng);
                self.to_track(format!("{prefix}{i:06}"), &xy)
            })
            .collect()
    }

    /// Walkers that leave a corridor with a right-angle turn in the middle of
    /// a straight stretch and head into open ground.
    pub fn mid_corridor_turn_tracks(&self, n: usize, seed: u64, prefix: &str) -> Vec<Track> {
        let mut rng = Self::rng(seed, 3);
        (0..n)
            .map(|i| {
                let lane = self.lane(&mut rng);
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let run_out = rng.random_range(100.0..160.0);
                let poly = if rng.random::<bool>() {
                    // Eastbound on A's horizontal leg, turning at x in [120, 190].
                    let y = PATH_A[0].1 + lane;
                    let x0 = rng.random_range(60.0..80.0);
                    let xt = rng.random_range(120.0..190.0);
                    vec![(x0, y), (xt, y), (xt, y + side * run_out)]
                } else {
                    // Southbound on B, turning at y in [120, 250].
                    let x = PATH_B[0].0 + lane;
                    let y0 = rng.random_range(40.0..60.0);
                    let yt = rng.random_range(120.0..250.0);
                    vec![(x, y0), (x, yt), (x + side * run_out, yt)]
                };
                let speed = self.speed(&mut rng);
                let xy = walk(&poly, speed, self.point_noise, &mut rng);
                self.to_track(format!("{prefix}{i:06}"), &xy)
            })
            .collect()
    }

    /// Out-and-back walkers: along A's horizontal leg, then back the way they
    /// came. Every step is ordinary corridor motion; the path length between
    /// revisited places is not.
    pub fn out_and_back_tracks(&self, n: usize, seed: u64, prefix: &str) -> Vec<Track> {
        let mut rng = Self::rng(seed, 4);
        (0..n)
            .map(|i| {
                let y = PATH_A[0].1 + self.lane(&mut rng);
                let x0 = rng.random_range(60.0..120.0);
                let x_turn = rng.random_range(300.0..420.0);
                let x_end = rng.random_range(x0 + 20.0..x0 + 120.0);
                let poly = vec![(x0, y), (x_turn, y), (x_end, y + 0.01)];
                let speed = self.speed(&mut rng);
                let xy = walk(&poly, speed, self.point_noise, &mut rng);
                self.to_track(format!("{prefix}{i:06}"), &xy)
            })
            .collect()
    }

    /// Stationary features jittering by less than a pixel, as produced by
    /// camera shake.
    pub fn jitter_tracks(&self, n: usize, seed: u64, prefix: &str) -> Vec<Track> {
        let mut rng = Self::rng(seed, 5);
        (0..n)
            .map(|i| {
                let c = (rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
                let sigma = rng.random_range(0.1..0.9);
                let jitter = Normal::new(0.0, sigma).expect("valid sigma");
                let len = rng.random_range(30..300);
                let xy: Vec<_> = (0..len)
                    .map(|_| (c.0 + jitter.sample(&mut rng), c.1 + jitter.sample(&mut rng)))
                    .collect();
                self.to_track(format!("{prefix}{i:06}"), &xy)
            })
            .collect()
    }

    /// Scene backdrop: flat ground with the two paths drawn as darker bands.
    pub fn scene_image(&self) -> Frame {
        let (w, h) = WORLD_SIZE;
        let near = |p: (f64, f64), pts: &[(f64, f64)]| {
            pts.windows(2).any(|s| dist_to_segment(p, s[0], s[1]) < 12.0)
        };
        Frame::from_fn(w, h, |x, y| {
            let p = (x as f64, y as f64);
            if near(p, &PATH_A) || near(p, &PATH_B) {
                0.35
            } else {
                0.75
            }
        })
        .expect("scene frame")
    }
}

/// Region roamed by [`wander_tracks`]: `(x0, y0, x1, y1)`.
pub const WANDER_BOX: (f64, f64, f64, f64) = (200.0, 120.0, 440.0, 360.0);

/// Unstructured walkers: smooth random headings inside [`WANDER_BOX`],
/// turning back at its edges. Their primitive sequences rarely repeat, which
/// makes their scores nearly tie-free. Each walk takes a number of steps
/// drawn from `steps`, at about 2 px per step.
pub fn wander_tracks(n: usize, steps: std::ops::Range<usize>, seed: u64, prefix: &str) -> Vec<Track> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(6);
    let turn = Normal::new(0.0, 0.08).expect("valid sigma");
    let noise = Normal::new(0.0, 0.3).expect("valid sigma");
    let (x0, y0, x1, y1) = WANDER_BOX;
    (0..n)
        .map(|i| {
            let mut p = (rng.random_range(x0..x1), rng.random_range(y0..y1));
            let mut heading = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let speed = rng.random_range(1.7..2.3);
            let steps = rng.random_range(steps.clone());
            let mut xy = Vec::with_capacity(steps);
            for _ in 0..steps {
                xy.push((p.0 + noise.sample(&mut rng), p.1 + noise.sample(&mut rng)));
                heading += turn.sample(&mut rng);
                let next = (p.0 + speed * heading.cos(), p.1 + speed * heading.sin());
                if next.0 < x0 || next.0 > x1 || next.1 < y0 || next.1 > y1 {
                    heading += std::f64::consts::PI;
                } else {
                    p = next;
                }
            }
            Track::from_xy(format!("{prefix}{i:06}"), &xy).expect("generated tracks are valid")
        })
        .collect()
}

/// Distance from `(x, y)` to the nearer of the two path centrelines.
pub fn distance_to_paths(x: f64, y: f64) -> f64 {
    [&PATH_A[..], &PATH_B[..]]
        .iter()
        .flat_map(|pts| pts.windows(2).map(|s| dist_to_segment((x, y), s[0], s[1])))
        .fold(f64::INFINITY, f64::min)
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let l2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / l2).clamp(0.0, 1.0);
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}
