//! Tracklets and the primitive vocabulary.
//!
//! A track is cut into overlapping segments of fixed arc length `delta_d`
//! whose starts are `delta_d / 2` apart. Each segment becomes a [`Tracklet`]:
//! the mean of its points and the undirected orientation of its end-to-end
//! chord. Tracklets are clustered into [`Primitive`]s, and any track can then
//! be rewritten as the sequence of its tracklets' nearest primitives.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::track::Track;

/// Reduces an angle into `[0, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(PI);
    if w >= PI {
        0.0
    } else {
        w
    }
}

/// Distance between two undirected orientations, in `[0, pi/2]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub x_hat: f64,
    pub y_hat: f64,
    /// Undirected orientation in `[0, pi)`.
    pub theta: f64,
    pub source_track: String,
    pub segment_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "Y")]
    pub y: f64,
    #[serde(rename = "Theta")]
    pub theta: f64,
    pub member_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    /// Arc length of one tracklet segment (pixels).
    pub delta_d: f64,
    /// Spatial cluster radius (pixels).
    pub delta_q: f64,
    /// Angular cluster radius (radians), below pi/4.
    pub delta_theta: f64,
}

impl ScaleConfig {
    pub fn new(delta_d: f64) -> Self {
        Self {
            delta_d,
            delta_q: 25.0,
            delta_theta: PI / 16.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_d > 0.0) || !self.delta_d.is_finite() {
            return Err(Error::validation("delta_d must be positive"));
        }
        if !(self.delta_q > 0.0) || !self.delta_q.is_finite() {
            return Err(Error::validation("delta_q must be positive"));
        }
        if !(self.delta_theta > 0.0 && self.delta_theta < FRAC_PI_4) {
            return Err(Error::validation("delta_theta must lie in (0, pi/4)"));
        }
        Ok(())
    }

    /// Weight that converts `tan` of an angular deviation into pixels.
    fn angular_weight(&self) -> f64 {
        self.delta_q / self.delta_theta.tan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveVocabulary {
    pub scale: ScaleConfig,
    pub primitives: Vec<Primitive>,
}

impl PrimitiveVocabulary {
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }
}

/// Why a track could not be written as a primitive sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CanonizeError {
    #[error("track is shorter than one tracklet at this scale")]
    TooShort,
    #[error("tracklet {segment} is orthogonal to every primitive")]
    AssignmentImpossible { segment: usize },
}

fn cumulative_arc(track: &Track) -> Vec<f64> {
    let pts = track.points();
    let mut acc = Vec::with_capacity(pts.len());
    let mut s = 0.0;
    acc.push(0.0);
    for w in pts.windows(2) {
        s += (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
        acc.push(s);
    }
    acc
}

/// Index of the sample whose cumulative arc length is closest to `target`
/// (the earlier one on ties).
fn nearest_sample(arc: &[f64], target: f64) -> usize {
    let i = arc.partition_point(|&a| a < target);
    if i == 0 {
        return 0;
    }
    if i == arc.len() {
        return arc.len() - 1;
    }
    if target - arc[i - 1] <= arc[i] - target {
        i - 1
    } else {
        i
    }
}

/// Cuts a track into tracklets. Returns an empty list when the track's arc
/// length is below `delta_d`.
pub fn extract_tracklets(track: &Track, scale: &ScaleConfig) -> Vec<Tracklet> {
    let pts = track.points();
    let arc = cumulative_arc(track);
    let total = *arc.last().expect("tracks are non-empty");
    let half = scale.delta_d / 2.0;
    let slack = 1e-9 * total.max(1.0);
    let mut out = Vec::new();
    for slot in 0usize.. {
        let start_arc = slot as f64 * half;
        let end_arc = start_arc + scale.delta_d;
        if end_arc > total + slack {
            break;
        }
        let s = nearest_sample(&arc, start_arc);
        let e = nearest_sample(&arc, end_arc);
        if e <= s {
            continue;
        }
        let (dx, dy) = (pts[e].x - pts[s].x, pts[e].y - pts[s].y);
        if dx == 0.0 && dy == 0.0 {
            continue;
        }
        let n = (e - s + 1) as f64;
        let seg = &pts[s..=e];
        out.push(Tracklet {
            x_hat: seg.iter().map(|p| p.x).sum::<f64>() / n,
            y_hat: seg.iter().map(|p| p.y).sum::<f64>() / n,
            theta: wrap_angle(dy.atan2(dx)),
            source_track: track.id().to_string(),
            segment_index: slot,
        });
    }
    out
}

/// One centre-direction update: every member's deviation from `theta_c` is
/// wrapped into `(-pi/2, pi/2]`, the deviations are averaged, and the mean is
/// added to `theta_c`. The result is reduced into `[0, pi)`.
///
/// Fails when a member lies `pi/4` or further from `theta_c`, where the mean
/// direction is no longer unambiguous.
pub fn circular_mean_update(theta_c: f64, members: &[f64]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Degenerate("no members to average".into()));
    }
    let mut sum = 0.0;
    for &theta in members {
        if angular_distance(theta, theta_c) >= FRAC_PI_4 {
            return Err(Error::Degenerate(format!(
                "direction {theta} is not within pi/4 of centre {theta_c}"
            )));
        }
        let mut dev = theta - theta_c;
        if dev > FRAC_PI_2 {
            dev -= PI;
        }
        if dev <= -FRAC_PI_2 {
            dev += PI;
        }
        sum += dev;
    }
    Ok(wrap_angle(theta_c + sum / members.len() as f64))
}

fn within(a: &Tracklet, x: f64, y: f64, theta: f64, scale: &ScaleConfig) -> bool {
    (a.x_hat - x).hypot(a.y_hat - y) <= scale.delta_q && angular_distance(a.theta, theta) <= scale.delta_theta
}

const MAX_INNER_ITERATIONS: usize = 100;

/// Clusters tracklets into a primitive vocabulary.
///
/// Tracklets are visited in (source track, segment index) order; the first
/// unclustered one seeds a cluster, which then repeatedly admits every
/// unclustered tracklet within `delta_q` and `delta_theta` of both the seed
/// and the current centre, and recentres, until membership stops changing.
pub fn cluster_tracklets(tracklets: &[Tracklet], scale: &ScaleConfig) -> Result<PrimitiveVocabulary> {
    let (primitives, _) = cluster_with_members(tracklets, scale)?;
    Ok(PrimitiveVocabulary {
        scale: *scale,
        primitives,
    })
}

type Clusters = (Vec<Primitive>, Vec<Vec<usize>>);

fn cluster_with_members(tracklets: &[Tracklet], scale: &ScaleConfig) -> Result<Clusters> {
    scale.validate()?;
    if tracklets.is_empty() {
        return Err(Error::validation("cannot cluster an empty tracklet set"));
    }
    let mut order: Vec<usize> = (0..tracklets.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&tracklets[a], &tracklets[b]);
        ta.source_track
            .cmp(&tb.source_track)
            .then(ta.segment_index.cmp(&tb.segment_index))
    });
    // rank[i] = position of tracklet i in visiting order
    let mut rank = vec![0usize; tracklets.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let cell_of = |t: &Tracklet| {
        (
            (t.x_hat / scale.delta_q).floor() as i64,
            (t.y_hat / scale.delta_q).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for &i in &order {
        grid.entry(cell_of(&tracklets[i])).or_default().push(i);
    }

    let mut clustered = vec![false; tracklets.len()];
    let mut primitives = Vec::new();
    let mut all_members = Vec::new();
    for &seed in &order {
        if clustered[seed] {
            continue;
        }
        let s = &tracklets[seed];
        let (cx, cy) = cell_of(s);
        let mut candidates: Vec<usize> = Vec::new();
        for gy in cy - 1..=cy + 1 {
            for gx in cx - 1..=cx + 1 {
                if let Some(cell) = grid.get(&(gx, gy)) {
                    candidates.extend(
                        cell.iter()
                            .copied()
                            .filter(|&i| !clustered[i] && within(&tracklets[i], s.x_hat, s.y_hat, s.theta, scale)),
                    );
                }
            }
        }
        candidates.sort_by_key(|&i| rank[i]);

        let mut centre = (s.x_hat, s.y_hat, s.theta);
        let mut members = vec![seed];
        for _ in 0..MAX_INNER_ITERATIONS {
            let mut next: Vec<usize> = candidates
                .iter()
                .copied()
                .filter(|&i| i == seed || within(&tracklets[i], centre.0, centre.1, centre.2, scale))
                .collect();
            if !next.contains(&seed) {
                next.insert(0, seed);
            }
            if next == members {
                break;
            }
            members = next;
            let n = members.len() as f64;
            let mx = members.iter().map(|&i| tracklets[i].x_hat).sum::<f64>() / n;
            let my = members.iter().map(|&i| tracklets[i].y_hat).sum::<f64>() / n;
            let thetas: Vec<f64> = members.iter().map(|&i| tracklets[i].theta).collect();
            let mt = circular_mean_update(centre.2, &thetas)?;
            centre = (mx, my, mt);
        }
        for &i in &members {
            clustered[i] = true;
        }
        primitives.push(Primitive {
            x: centre.0,
            y: centre.1,
            theta: centre.2,
            member_count: members.len(),
        });
        all_members.push(members);
    }
    Ok((primitives, all_members))
}

/// Dissimilarity between a primitive and a tracklet: squared spatial distance
/// plus a squared angular term that grows without bound as the two become
/// orthogonal.
pub fn assignment_cost(p: &Primitive, t: &Tracklet, scale: &ScaleConfig) -> f64 {
    let dtheta = angular_distance(p.theta, t.theta);
    if FRAC_PI_2 - dtheta <= 1e-12 {
        return f64::INFINITY;
    }
    let ang = scale.angular_weight() * dtheta.tan();
    (p.x - t.x_hat).powi(2) + (p.y - t.y_hat).powi(2) + ang * ang
}

/// Index of the primitive closest to `t` (lowest index on ties) and its cost.
/// `None` when every primitive is orthogonal to `t`.
pub fn assign_tracklet(t: &Tracklet, vocab: &PrimitiveVocabulary) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, p) in vocab.primitives.iter().enumerate() {
        // The angular term is non-negative, so the spatial part alone can
        // rule a primitive out.
        if best.is_some_and(|(_, c)| (p.x - t.x_hat).powi(2) + (p.y - t.y_hat).powi(2) >= c) {
            continue;
        }
        let cost = assignment_cost(p, t, &vocab.scale);
        if cost.is_finite() && best.map_or(true, |(_, c)| cost < c) {
            best = Some((j, cost));
        }
    }
    best
}

/// Rewrites a track as the primitive indices of its tracklets, in order.
/// Repeated indices are kept.
pub fn canonize_track(track: &Track, vocab: &PrimitiveVocabulary) -> std::result::Result<Vec<usize>, CanonizeError> {
    let tracklets = extract_tracklets(track, &vocab.scale);
    if tracklets.is_empty() {
        return Err(CanonizeError::TooShort);
    }
    tracklets
        .iter()
        .enumerate()
        .map(|(segment, t)| {
            assign_tracklet(t, vocab)
                .map(|(j, _)| j)
                .ok_or(CanonizeError::AssignmentImpossible { segment })
        })
        .collect()
}
