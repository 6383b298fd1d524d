//! Track data types, the JSONL track file format, and the filter that drops
//! short or stationary tracks.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation of a feature in the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: u64,
    pub x: f64,
    pub y: f64,
}

impl TrackPoint {
    pub fn new(frame: u64, x: f64, y: f64) -> Self {
        Self { frame, x, y }
    }
}

/// A time-ordered sequence of observations of one feature.
///
/// Construction through [`Track::new`] guarantees a non-empty point list with
/// finite coordinates and strictly increasing frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    id: String,
    points: Vec<TrackPoint>,
}

impl Track {
    pub fn new(id: impl Into<String>, points: Vec<TrackPoint>) -> Result<Self> {
        let id = id.into();
        if points.is_empty() {
            return Err(Error::validation(format!("track {id}: no points")));
        }
        if let Some(p) = points.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::validation(format!(
                "track {id}: non-finite coordinate at frame {}",
                p.frame
            )));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].frame <= w[0].frame) {
            return Err(Error::validation(format!(
                "track {id}: frame indices not strictly increasing ({} then {})",
                w[0].frame, w[1].frame
            )));
        }
        Ok(Self { id, points })
    }

    /// Builds a track from bare coordinates, numbering frames 0, 1, 2, ...
    pub fn from_xy(id: impl Into<String>, xy: &[(f64, f64)]) -> Result<Self> {
        let points = xy
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| TrackPoint::new(i as u64, x, y))
            .collect();
        Self::new(id, points)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total polyline length in pixels.
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

/// Thresholds for discarding uninformative tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Minimum number of observations (frames).
    pub min_length: usize,
    /// Minimum spatial variance, in squared pixels.
    pub min_variance: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_length: 30,
            min_variance: 4.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_length < 2 {
            return Err(Error::validation("min_length must be at least 2"));
        }
        if !(self.min_variance > 0.0) {
            return Err(Error::validation("min_variance must be positive"));
        }
        Ok(())
    }
}

/// Spatial variance of a track: the summed squared deviation of both
/// coordinates from their means, divided by `N - 1`.
pub fn track_variance(track: &Track) -> Result<f64> {
    let pts = track.points();
    let n = pts.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "track {}: variance needs at least 2 points",
            track.id()
        )));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.x).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.y).sum::<f64>() / nf;
    let ss: f64 = pts
        .iter()
        .map(|p| (p.x - mx).powi(2) + (p.y - my).powi(2))
        .sum();
    Ok(ss / (nf - 1.0))
}

/// Keeps tracks that are long enough and move enough. Order is preserved.
pub fn filter_tracks(tracks: &[Track], cfg: &FilterConfig) -> Vec<Track> {
    tracks
        .iter()
        .filter(|t| t.len() >= cfg.min_length)
        .filter(|t| track_variance(t).map_or(false, |v| v >= cfg.min_variance))
        .cloned()
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TrackLine {
    id: String,
    points: Vec<(u64, f64, f64)>,
}

/// Reads a JSONL track file. Blank lines are skipped.
pub fn load_tracks<R: BufRead>(reader: R) -> Result<Vec<Track>> {
    let mut tracks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrackLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let points = parsed
            .points
            .into_iter()
            .map(|(f, x, y)| TrackPoint::new(f, x, y))
            .collect();
        tracks.push(Track::new(parsed.id, points)?);
    }
    Ok(tracks)
}

/// Writes tracks as JSONL, one object per line.
pub fn write_tracks<W: Write>(mut writer: W, tracks: &[Track]) -> Result<()> {
    for t in tracks {
        let line = TrackLine {
            id: t.id.clone(),
            points: t.points.iter().map(|p| (p.frame, p.x, p.y)).collect(),
        };
        serde_json::to_writer(&mut writer, &line).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize, step: f64) -> Track {
        let xy: Vec<_> = (0..n).map(|i| (i as f64 * step, 0.0)).collect();
        Track::from_xy("t", &xy).unwrap()
    }

    #[test]
    fn loads_minimal_line() {
        let src = r#"{"id":"t0","points":[[0,1.0,2.0],[1,1.5,2.0]]}"#;
        let tracks = load_tracks(src.as_bytes()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].id(), "t0");
        assert_eq!(tracks[0].points()[1], TrackPoint::new(1, 1.5, 2.0));
    }

    #[test]
    fn repeated_frame_is_rejected_with_track_id() {
        let src = "{\"id\":\"ok\",\"points\":[[0,0,0]]}\n{\"id\":\"bad\",\"points\":[[3,0,0],[3,1,1]]}\n";
        let err = load_tracks(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("bad")), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let src = "{\"id\":\"a\",\"points\":[[0,0,0]]}\n\n{\"id\": oops}\n";
        match load_tracks(src.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn variance_examples() {
        let still = Track::from_xy("s", &vec![(3.0, 4.0); 100]).unwrap();
        assert_eq!(track_variance(&still).unwrap(), 0.0);
        // sum (i - 49.5)^2 for i in 0..100 = 100 * (100^2 - 1) / 12 = 83325
        let v = track_variance(&line(100, 1.0)).unwrap();
        assert!((v - 83325.0 / 99.0).abs() < 1e-9);
        let two = Track::from_xy("p", &[(0.0, 0.0), (3.0, 4.0)]).unwrap();
        assert!((track_variance(&two).unwrap() - 12.5).abs() < 1e-12);
        let one = Track::from_xy("o", &[(0.0, 0.0)]).unwrap();
        assert!(matches!(track_variance(&one), Err(Error::Degenerate(_))));
    }

    #[test]
    fn filter_examples() {
        let cfg = FilterConfig::default();
        let short: Vec<_> = (0..29).map(|i| (i as f64 * 10.0, 0.0)).collect();
        let short = Track::from_xy("short", &short).unwrap();
        let still = Track::from_xy("still", &vec![(1.0, 1.0); 100]).unwrap();
        let moving = line(100, 1.0);
        let kept = filter_tracks(&[short, still, moving.clone()], &cfg);
        assert_eq!(kept, vec![moving]);
    }

    #[test]
    fn round_trips_through_jsonl() {
        let tracks = vec![line(3, 0.25), Track::from_xy("b", &[(1.0, -2.5)]).unwrap()];
        let mut buf = Vec::new();
        write_tracks(&mut buf, &tracks).unwrap();
        assert_eq!(load_tracks(buf.as_slice()).unwrap(), tracks);
    }

    fn arb_track() -> impl Strategy<Value = Track> {
        prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 2..60)
            .prop_map(|xy| Track::from_xy("r", &xy).unwrap())
    }

    proptest! {
        #[test]
        fn variance_is_translation_invariant(t in arb_track(), dx in -1e3f64..1e3, dy in -1e3f64..1e3) {
            let shifted: Vec<_> = t.points().iter().map(|p| (p.x + dx, p.y + dy)).collect();
            let shifted = Track::from_xy("s", &shifted).unwrap();
            let a = track_variance(&t).unwrap();
            let b = track_variance(&shifted).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12) + 1e-9);
        }

        #[test]
        fn variance_matches_pairwise_oracle(t in arb_track()) {
            // Independent route: sum over all point pairs of squared distance
            // equals N * sum of squared deviations from the mean.
            let p = t.points();
            let n = p.len() as f64;
            let mut pair_sum = 0.0;
            for i in 0..p.len() {
                for j in (i + 1)..p.len() {
                    pair_sum += (p[i].x - p[j].x).powi(2) + (p[i].y - p[j].y).powi(2);
                }
            }
            let oracle = pair_sum / n / (n - 1.0);
            let v = track_variance(&t).unwrap();
            prop_assert!((v - oracle).abs() <= 1e-12 * oracle);
        }

        #[test]
        fn filter_is_idempotent(ts in prop::collection::vec(arb_track(), 0..20), min_len in 2usize..40, min_var in 0.1f64..5e4) {
            let cfg = FilterConfig { min_length: min_len, min_variance: min_var };
            let once = filter_tracks(&ts, &cfg);
            prop_assert_eq!(filter_tracks(&once, &cfg), once);
        }
    }
}
