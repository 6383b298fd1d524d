//! Training, threshold selection and batch scoring.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{EnsembleModel, Rho1, Unscorable, DEFAULT_ALPHA};
use crate::pursuit::{fit_pursuit, PursuitModel, Rho2};
use crate::track::{filter_tracks, FilterConfig, Track, TrackPoint};
use crate::tracklet::{cluster_tracklets, extract_tracklets, Primitive, ScaleConfig};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Fraction of training tracks allowed strictly below each threshold.
    pub quantile: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { quantile: 0.0005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Tracklet arc lengths, strictly increasing. The first is the reference
    /// scale and the only one used by the pursuit model.
    pub scales: Vec<f64>,
    pub delta_q: f64,
    pub delta_theta: f64,
    pub alpha: f64,
    pub filter: FilterConfig,
    pub threshold: ThresholdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scales: vec![50.0, 75.0, 110.0, 150.0],
            delta_q: 25.0,
            delta_theta: PI / 16.0,
            alpha: DEFAULT_ALPHA,
            filter: FilterConfig::default(),
            threshold: ThresholdConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn scale_configs(&self) -> Vec<ScaleConfig> {
        self.scales
            .iter()
            .map(|&delta_d| ScaleConfig {
                delta_d,
                delta_q: self.delta_q,
                delta_theta: self.delta_theta,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::validation("at least one scale is required"));
        }
        if self.scales.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::validation("scales must be strictly increasing"));
        }
        for s in self.scale_configs() {
            s.validate()?;
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::validation("alpha must be finite and non-negative"));
        }
        let q = self.threshold.quantile;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::validation("threshold quantile must lie in (0, 1)"));
        }
        self.filter.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub format_version: u64,
    pub input_tracks: usize,
    pub filtered_tracks: usize,
    /// Filtered tracks with at least two finest-scale primitives.
    pub scoreable_tracks: usize,
    pub unscoreable_tracks: usize,
    pub tracklets_per_scale: Vec<usize>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub ensemble: EnsembleModel,
    pub pursuit: PursuitModel,
    pub training_meta: TrainingMeta,
}

/// Lower-quantile threshold: the `(floor(n q) + 1)`-th smallest score, so at
/// most `floor(n q)` scores lie strictly below it.
pub fn select_threshold(scores: &[f64], quantile: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::validation("no scores to threshold"));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::validation("quantile must lie in (0, 1)"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    // n * q is often an integer that rounding pushes just below itself.
    let k = (sorted.len() as f64 * quantile * (1.0 + 1e-12)).floor() as usize;
    Ok(sorted[k.min(sorted.len() - 1)])
}

/// Both conformances of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackScores {
    pub rho1: Rho1,
    pub rho2: Rho2,
    pub novel1: bool,
    pub novel2: bool,
    /// Finest-scale primitive sequence.
    pub canonized: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub track_id: String,
    pub outcome: std::result::Result<TrackScores, Unscorable>,
}

impl SceneModel {
    pub fn threshold_r1(&self) -> f64 {
        self.ensemble.threshold_r1
    }

    pub fn threshold_r2(&self) -> f64 {
        self.pursuit.threshold_r2
    }

    /// Scores without verdicts, from per-scale sequences.
    fn raw_scores(&self, seqs: &[Option<Vec<usize>>]) -> std::result::Result<(Rho1, Rho2), Unscorable> {
        let finest = seqs.first().and_then(|s| s.as_deref()).unwrap_or(&[]);
        if finest.len() < 2 {
            return Err(Unscorable::TooFewTracklets);
        }
        let rho1 = self.ensemble.rho1_from_sequences(seqs).map_err(|_| Unscorable::TooFewTracklets)?;
        let rho2 = match self.pursuit.rho2_from_sequence(finest) {
            Ok(Some(r)) => r,
            _ => return Err(Unscorable::TooFewTracklets),
        };
        Ok((rho1, rho2))
    }

    pub fn score_track(&self, track: &Track) -> std::result::Result<TrackScores, Unscorable> {
        let seqs = self.ensemble.canonize(track)?;
        let (rho1, rho2) = self.raw_scores(&seqs)?;
        Ok(TrackScores {
            novel1: rho1.rho1 < self.threshold_r1(),
            novel2: rho2.rho2 < self.threshold_r2(),
            rho1,
            rho2,
            canonized: seqs.into_iter().next().flatten().unwrap_or_default(),
        })
    }

    /// Primitives of scale `k` (0 is the finest).
    pub fn primitives(&self, k: usize) -> Option<&[Primitive]> {
        self.ensemble.chains.get(k).map(|c| c.vocab.primitives.as_slice())
    }
}

/// Trains both models on `tracks`.
pub fn train(tracks: &[Track], cfg: &TrainConfig) -> Result<SceneModel> {
    cfg.validate()?;
    let kept = filter_tracks(tracks, &cfg.filter);
    if kept.is_empty() {
        return Err(Error::validation("no track survives filtering"));
    }

    let mut vocabs = Vec::with_capacity(cfg.scales.len());
    let mut tracklets_per_scale = Vec::with_capacity(cfg.scales.len());
    for scale in cfg.scale_configs() {
        let tracklets: Vec<_> = crate::par::map(&kept, |t| extract_tracklets(t, &scale))
            .into_iter()
            .flatten()
            .collect();
        if tracklets.is_empty() {
            return Err(Error::validation(format!("no tracklets at scale {}", scale.delta_d)));
        }
        tracklets_per_scale.push(tracklets.len());
        vocabs.push(cluster_tracklets(&tracklets, &scale)?);
    }

    // sequences[k][t]
    let sequences: Vec<Vec<Option<Vec<usize>>>> = vocabs
        .iter()
        .map(|v| crate::par::map(&kept, |t| crate::tracklet::canonize_track(t, v).ok()))
        .collect();

    let finest_vocab = vocabs[0].clone();
    let mut ensemble = EnsembleModel::fit(vocabs, &sequences, cfg.alpha)?;
    let finest: Vec<Vec<usize>> = sequences[0].iter().flatten().cloned().collect();
    let mut pursuit = fit_pursuit(&finest, finest_vocab, cfg.alpha)?;

    let per_track: Vec<Vec<Option<Vec<usize>>>> = (0..kept.len())
        .map(|t| sequences.iter().map(|s| s[t].clone()).collect())
        .collect();
    let partial = SceneModel {
        ensemble: ensemble.clone(),
        pursuit: pursuit.clone(),
        training_meta: TrainingMeta {
            format_version: FORMAT_VERSION,
            input_tracks: 0,
            filtered_tracks: 0,
            scoreable_tracks: 0,
            unscoreable_tracks: 0,
            tracklets_per_scale: Vec::new(),
            config: cfg.clone(),
        },
    };
    let scored: Vec<(f64, f64)> = crate::par::map(&per_track, |seqs| partial.raw_scores(seqs).ok())
        .into_iter()
        .flatten()
        .map(|(r1, r2)| (r1.rho1, r2.rho2))
        .collect();
    if scored.is_empty() {
        return Err(Error::validation("no training track has two finest-scale primitives"));
    }
    let r1: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let r2: Vec<f64> = scored.iter().map(|s| s.1).collect();
    ensemble.threshold_r1 = select_threshold(&r1, cfg.threshold.quantile)?;
    pursuit.threshold_r2 = select_threshold(&r2, cfg.threshold.quantile)?;

    Ok(SceneModel {
        ensemble,
        pursuit,
        training_meta: TrainingMeta {
            format_version: FORMAT_VERSION,
            input_tracks: tracks.len(),
            filtered_tracks: kept.len(),
            scoreable_tracks: scored.len(),
            unscoreable_tracks: kept.len() - scored.len(),
            tracklets_per_scale,
            config: cfg.clone(),
        },
    })
}

pub fn score_tracks(model: &SceneModel, tracks: &[Track]) -> Vec<ScoreRecord> {
    crate::par::map(tracks, |t| ScoreRecord {
        track_id: t.id().to_string(),
        outcome: model.score_track(t),
    })
}

pub const CSV_HEADER: &str = "track_id,rho1,rho2,novel1,novel2,worst_i,worst_j";

/// Writes score records as CSV. Unscorable tracks keep their row, with empty
/// scores and `unscorable` in both verdict columns.
pub fn write_scores_csv<W: Write>(mut w: W, records: &[ScoreRecord]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        match &r.outcome {
            Ok(s) => writeln!(
                w,
                "{},{},{},{},{},{},{}",
                csv_field(&r.track_id),
                s.rho1.rho1,
                s.rho2.rho2,
                s.novel1,
                s.novel2,
                s.rho2.prim_a,
                s.rho2.prim_b
            )?,
            Err(_) => writeln!(w, "{},,,unscorable,unscorable,,", csv_field(&r.track_id))?,
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Resamples a polyline at unit arc-length steps, keeping the first and last
/// vertices. Frames are numbered 0, 1, 2, ...
pub fn densify_polyline(id: &str, points: &[(f64, f64)]) -> Result<Track> {
    if points.len() < 2 {
        return Err(Error::validation("a polyline needs at least two points"));
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::validation("polyline coordinates must be finite"));
    }
    let mut out = vec![points[0]];
    let mut travelled = 0.0;
    let mut next_mark = 1.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        if len == 0.0 {
            continue;
        }
        while next_mark <= travelled + len {
            let f = (next_mark - travelled) / len;
            out.push((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)));
            next_mark += 1.0;
        }
        travelled += len;
    }
    let last = *points.last().unwrap();
    let tail = out.last().unwrap();
    if (tail.0 - last.0).hypot(tail.1 - last.1) > 1e-9 {
        out.push(last);
    }
    let pts = out
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| TrackPoint::new(i as u64, x, y))
        .collect();
    Track::new(id, pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::CorridorWorld;
    use proptest::prelude::*;

    #[test]
    fn threshold_order_statistic() {
        let scores: Vec<f64> = (0..10_000).map(|i| i as f64).rev().collect();
        let t = select_threshold(&scores, 0.0005).unwrap();
        assert_eq!(t, 5.0);
        assert_eq!(scores.iter().filter(|&&s| s < t).count(), 5);
        assert_eq!(select_threshold(&[3.5], 0.0005).unwrap(), 3.5);
        assert!(select_threshold(&[], 0.1).is_err());
        assert!(select_threshold(&[1.0], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn threshold_bounds_the_lower_tail(scores in prop::collection::vec(-1e3f64..1e3, 1..400), q in 0.0001f64..0.5) {
            let t = select_threshold(&scores, q).unwrap();
            let n = scores.len() as f64;
            let below = scores.iter().filter(|&&s| s < t).count() as f64;
            let at_or_below = scores.iter().filter(|&&s| s <= t).count() as f64;
            prop_assert!(below / n <= q + 1e-12);
            prop_assert!(at_or_below / n > q - 1e-12 || at_or_below == n);
        }

        #[test]
        fn densified_steps_are_unit(pts in prop::collection::vec((0.0f64..200.0, 0.0f64..200.0), 2..6)) {
            let t = densify_polyline("p", &pts).unwrap();
            let p = t.points();
            prop_assert_eq!((p[0].x, p[0].y), pts[0]);
            let last = pts.last().unwrap();
            let end = p.last().unwrap();
            prop_assert!((end.x - last.0).abs() < 1e-9 && (end.y - last.1).abs() < 1e-9);
            for w in p.windows(2) {
                prop_assert!((w[1].x - w[0].x).hypot(w[1].y - w[0].y) <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn densify_examples() {
        let t = densify_polyline("p", &[(0.0, 0.0), (3.0, 0.0), (3.0, 2.5)]).unwrap();
        let xs: Vec<(f64, f64)> = t.points().iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(
            xs,
            vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (3.0, 1.0), (3.0, 2.0), (3.0, 2.5)]
        );
        assert!(densify_polyline("p", &[(0.0, 0.0)]).is_err());
        assert!(densify_polyline("p", &[(0.0, 0.0), (f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn empty_and_filtered_out_corpora_fail() {
        let cfg = TrainConfig::default();
        assert!(train(&[], &cfg).is_err());
        let still = Track::from_xy("s", &[(1.0, 1.0); 50]).unwrap();
        assert!(matches!(train(&[still], &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn single_track_corpus_thresholds_at_its_scores() {
        let xy: Vec<(f64, f64)> = (0..400).map(|i| (20.0 + i as f64, 100.0)).collect();
        let t = Track::from_xy("only", &xy).unwrap();
        let m = train(std::slice::from_ref(&t), &TrainConfig::default()).unwrap();
        let s = m.score_track(&t).unwrap();
        assert_eq!(s.rho1.rho1, m.threshold_r1());
        assert_eq!(s.rho2.rho2, m.threshold_r2());
        assert!(!s.novel1 && !s.novel2);
    }

    #[test]
    fn scale_without_tracklets_is_named() {
        let xy: Vec<(f64, f64)> = (0..60).map(|i| (i as f64, 0.0)).collect();
        let t = Track::from_xy("short", &xy).unwrap();
        let cfg = TrainConfig {
            scales: vec![20.0, 100.0],
            ..TrainConfig::default()
        };
        match train(&[t], &cfg) {
            Err(Error::Validation(msg)) => assert!(msg.contains("100"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_scoring_input() {
        let world = CorridorWorld::default();
        let m = train(&world.normal_tracks(200, 3, "n"), &TrainConfig::default()).unwrap();
        assert!(score_tracks(&m, &[]).is_empty());
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn finest_vocabularies_agree_and_sit_on_the_paths() {
        let world = CorridorWorld::default();
        let m = train(&world.normal_tracks(400, 9, "n"), &TrainConfig::default()).unwrap();
        assert_eq!(m.ensemble.chains[0].vocab, m.pursuit.vocab);
        for p in &m.pursuit.vocab.primitives {
            let d = crate::synth::distance_to_paths(p.x, p.y);
            assert!(d <= m.training_meta.config.delta_q, "primitive at ({}, {}) is {d} px off", p.x, p.y);
        }
    }

    #[test]
    fn csv_rows() {
        let world = CorridorWorld::default();
        let m = train(&world.normal_tracks(200, 4, "n"), &TrainConfig::default()).unwrap();
        let short = Track::from_xy("tiny", &[(100.0, 340.0), (101.0, 340.0)]).unwrap();
        let good = world.normal_tracks(1, 77, "g").remove(0);
        let recs = score_tracks(&m, &[short, good]);
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "tiny,,,unscorable,unscorable,,");
        assert_eq!(lines[2].split(',').count(), 7);
    }
}
