//! Pursuit-constrained path-length model.
//!
//! People heading somewhere take roughly the same route between two places.
//! Every ordered pair of positions `a < b` in a finest-scale primitive
//! sequence yields a triplet `(s_a, s_b, L)` with `L = (b - a) * delta_d / 2`,
//! the arc length travelled between them. The model learns a pair probability
//! and a Gaussian over `L` for every pair seen in training; a track's
//! conformance `rho2` is its least likely triplet.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::Unscorable;
use crate::track::Track;
use crate::tracklet::{canonize_track, PrimitiveVocabulary};

/// Margin (nats) by which unseen pairs fall below the worst training triplet.
pub const UNSEEN_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub from_idx: usize,
    pub to_idx: usize,
    /// `log[P(i) P(j | i)]`.
    pub pair_log_prob: f64,
    pub mean_length: f64,
    pub sigma: f64,
    pub observation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PursuitModel {
    pub vocab: PrimitiveVocabulary,
    /// Observed pairs, sorted by `(from_idx, to_idx)`.
    pub stats: Vec<PairStats>,
    pub unseen_pair_log_prob: f64,
    pub threshold_r2: f64,
    pub sigma_floor: f64,
    pub smoothing_alpha: f64,
}

/// One triplet of a decomposed sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub pos_a: usize,
    pub pos_b: usize,
    pub from_idx: usize,
    pub to_idx: usize,
    pub length: f64,
}

/// All position pairs `a < b`, in lexicographic order. Sequences shorter
/// than two give nothing.
pub fn pair_decompose(sequence: &[usize], delta_d1: f64) -> Vec<Triplet> {
    let m = sequence.len();
    let mut out = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            out.push(Triplet {
                pos_a: a,
                pos_b: b,
                from_idx: sequence[a],
                to_idx: sequence[b],
                length: (b - a) as f64 * delta_d1 / 2.0,
            });
        }
    }
    out
}

#[derive(Default)]
struct Accum {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accum {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }
}

/// Fits pair probabilities and path-length Gaussians from finest-scale
/// sequences. The spread of each pair is floored at `delta_d / 4`.
pub fn fit_pursuit(sequences: &[Vec<usize>], vocab: PrimitiveVocabulary, alpha: f64) -> Result<PursuitModel> {
    let v = vocab.len();
    if v == 0 {
        return Err(Error::validation("vocabulary is empty"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::validation("smoothing alpha must be finite and non-negative"));
    }
    if !sequences.iter().any(|s| s.len() >= 2) {
        return Err(Error::validation("pursuit model needs a sequence of at least two primitives"));
    }
    let delta_d1 = vocab.scale.delta_d;
    let sigma_floor = delta_d1 / 4.0;

    let mut pairs: BTreeMap<(usize, usize), Accum> = BTreeMap::new();
    let mut heads = vec![0usize; v];
    let mut total = 0usize;
    for seq in sequences {
        if let Some(&s) = seq.iter().find(|&&s| s >= v) {
            return Err(Error::validation(format!("primitive index {s} out of range for {v} primitives")));
        }
        for t in pair_decompose(seq, delta_d1) {
            pairs.entry((t.from_idx, t.to_idx)).or_default().push(t.length);
            heads[t.from_idx] += 1;
            total += 1;
        }
    }

    let vf = v as f64;
    let stats = pairs
        .into_iter()
        .map(|((i, j), acc)| {
            let p_i = (heads[i] as f64 + alpha) / (total as f64 + alpha * vf);
            let p_j = (acc.n as f64 + alpha) / (heads[i] as f64 + alpha * vf);
            let sample_sigma = if acc.n > 1 {
                (acc.m2 / (acc.n - 1) as f64).sqrt()
            } else {
                0.0
            };
            PairStats {
                from_idx: i,
                to_idx: j,
                pair_log_prob: p_i.ln() + p_j.ln(),
                mean_length: acc.mean,
                sigma: sample_sigma.max(sigma_floor),
                observation_count: acc.n,
            }
        })
        .collect();

    let mut model = PursuitModel {
        vocab,
        stats,
        unseen_pair_log_prob: f64::NEG_INFINITY,
        threshold_r2: f64::NEG_INFINITY,
        sigma_floor,
        smoothing_alpha: alpha,
    };
    // Every training triplet belongs to an observed pair.
    let worst = crate::par::map(sequences, |seq| {
        pair_decompose(seq, delta_d1)
            .iter()
            .map(|t| model.observed_log_prob(t.from_idx, t.to_idx, t.length).unwrap_or(f64::INFINITY))
            .fold(f64::INFINITY, f64::min)
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    model.unseen_pair_log_prob = worst - UNSEEN_MARGIN;
    Ok(model)
}

/// Result of scoring one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rho2 {
    pub rho2: f64,
    pub pos_a: usize,
    pub pos_b: usize,
    pub prim_a: usize,
    pub prim_b: usize,
}

fn gaussian_log_density(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - (sigma * (2.0 * PI).sqrt()).ln()
}

impl PursuitModel {
    pub fn pair(&self, i: usize, j: usize) -> Option<&PairStats> {
        self.stats
            .binary_search_by_key(&(i, j), |s| (s.from_idx, s.to_idx))
            .ok()
            .map(|k| &self.stats[k])
    }

    fn observed_log_prob(&self, i: usize, j: usize, length: f64) -> Option<f64> {
        self.pair(i, j)
            .map(|s| s.pair_log_prob + gaussian_log_density(length, s.mean_length, s.sigma))
    }

    /// `log p(i, j, L)`; unseen pairs get the constant floor.
    pub fn triplet_log_prob(&self, i: usize, j: usize, length: f64) -> Result<f64> {
        let v = self.vocab.len();
        if i >= v || j >= v {
            return Err(Error::validation(format!("primitive pair ({i}, {j}) out of range for {v} primitives")));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::validation("path length must be positive"));
        }
        Ok(self.observed_log_prob(i, j, length).unwrap_or(self.unseen_pair_log_prob))
    }

    /// Minimum triplet log-probability of a finest-scale sequence and where
    /// it occurs; earlier `a`, then earlier `b`, wins ties.
    pub fn rho2_from_sequence(&self, seq: &[usize]) -> Result<Option<Rho2>> {
        let delta_d1 = self.vocab.scale.delta_d;
        let mut best: Option<Rho2> = None;
        for t in pair_decompose(seq, delta_d1) {
            let lp = self.triplet_log_prob(t.from_idx, t.to_idx, t.length)?;
            if best.is_none_or(|b| lp < b.rho2) {
                best = Some(Rho2 {
                    rho2: lp,
                    pos_a: t.pos_a,
                    pos_b: t.pos_b,
                    prim_a: t.from_idx,
                    prim_b: t.to_idx,
                });
            }
        }
        Ok(best)
    }

    /// Canonizes `track` at the finest scale and computes `rho2`.
    pub fn conformance_rho2(&self, track: &Track) -> std::result::Result<Rho2, Unscorable> {
        let seq = canonize_track(track, &self.vocab)?;
        match self.rho2_from_sequence(&seq) {
            Ok(Some(r)) => Ok(r),
            _ => Err(Unscorable::TooFewTracklets),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracklet::{Primitive, ScaleConfig};
    use proptest::prelude::*;

    fn vocab(v: usize, delta_d: f64) -> PrimitiveVocabulary {
        PrimitiveVocabulary {
            scale: ScaleConfig::new(delta_d),
            primitives: (0..v)
                .map(|i| Primitive {
                    x: 30.0 * i as f64,
                    y: 0.0,
                    theta: 0.0,
                    member_count: 1,
                })
                .collect(),
        }
    }

    #[test]
    fn decompose_examples() {
        let t = pair_decompose(&[4, 9], 50.0);
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].from_idx, t[0].to_idx, t[0].length), (4, 9, 25.0));
        let t = pair_decompose(&[0; 8], 50.0);
        let t37 = t.iter().find(|t| t.pos_a == 3 && t.pos_b == 7).unwrap();
        assert_eq!(t37.length, 100.0);
        assert_eq!(pair_decompose(&[0, 1, 2, 3, 4], 50.0).len(), 10);
        assert!(pair_decompose(&[3], 50.0).is_empty());
    }

    #[test]
    fn decompose_count_is_exhaustive() {
        for m in 0..=200usize {
            let seq: Vec<usize> = (0..m).collect();
            assert_eq!(pair_decompose(&seq, 50.0).len(), m * m.saturating_sub(1) / 2);
        }
    }

    #[test]
    fn constant_length_hits_the_floor() {
        // (0, 1) always four positions apart: L = 4 * 25 = 100.
        let seqs = vec![vec![0, 2, 2, 2, 1], vec![0, 2, 2, 2, 1]];
        let m = fit_pursuit(&seqs, vocab(3, 50.0), 0.5).unwrap();
        let s = m.pair(0, 1).unwrap();
        assert_eq!(s.mean_length, 100.0);
        assert_eq!(s.sigma, 12.5);
        assert_eq!(s.observation_count, 2);
        assert!(m.pair(1, 0).is_none());
        assert_eq!(m.triplet_log_prob(1, 0, 50.0).unwrap(), m.unseen_pair_log_prob);
    }

    #[test]
    fn two_point_sample_sigma() {
        // (0, 1) at L = 75 and L = 125 with delta_d = 50.
        let seqs = vec![vec![0, 2, 2, 1], vec![0, 2, 2, 2, 2, 1]];
        let m = fit_pursuit(&seqs, vocab(3, 50.0), 0.5).unwrap();
        let s = m.pair(0, 1).unwrap();
        assert_eq!(s.mean_length, 100.0);
        assert!((s.sigma - 35.35533905932738).abs() < 1e-9);
    }

    #[test]
    fn single_observation_gets_the_floor() {
        let m = fit_pursuit(&[vec![0, 1]], vocab(2, 40.0), 0.5).unwrap();
        assert_eq!(m.pair(0, 1).unwrap().sigma, 10.0);
        assert_eq!(m.sigma_floor, 10.0);
    }

    #[test]
    fn gaussian_peak_and_three_sigma() {
        let mut m = fit_pursuit(&[vec![0, 1]], vocab(2, 40.0), 0.5).unwrap();
        let s = m.stats[0];
        m.stats[0].sigma = 10.0;
        let peak = m.triplet_log_prob(0, 1, s.mean_length).unwrap();
        assert!((peak - (s.pair_log_prob - 3.2215236261987186)).abs() < 1e-12);
        let off = m.triplet_log_prob(0, 1, s.mean_length + 30.0).unwrap();
        assert!((peak - off - 4.5).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_short_corpora() {
        assert!(fit_pursuit(&[vec![0], vec![]], vocab(2, 50.0), 0.5).is_err());
        assert!(fit_pursuit(&[vec![0, 5]], vocab(2, 50.0), 0.5).is_err());
        let m = fit_pursuit(&[vec![0, 1]], vocab(2, 50.0), 0.5).unwrap();
        assert!(m.triplet_log_prob(2, 0, 10.0).is_err());
        assert!(m.triplet_log_prob(0, 1, 0.0).is_err());
    }

    #[test]
    fn ties_resolve_to_the_earliest_pair() {
        let m = fit_pursuit(&[vec![0, 1]], vocab(3, 50.0), 0.5).unwrap();
        // Everything involving primitive 2 is unseen and ties at the floor.
        let r = m.rho2_from_sequence(&[2, 2, 2]).unwrap().unwrap();
        assert_eq!((r.pos_a, r.pos_b), (0, 1));
        assert_eq!(r.rho2, m.unseen_pair_log_prob);
    }

    #[test]
    fn training_triplets_sit_above_the_unseen_floor() {
        let seqs = vec![vec![0, 1, 2], vec![0, 1, 1, 2], vec![2, 1]];
        let m = fit_pursuit(&seqs, vocab(3, 50.0), 0.5).unwrap();
        for s in &seqs {
            let r = m.rho2_from_sequence(s).unwrap().unwrap();
            assert!(r.rho2 >= m.unseen_pair_log_prob + UNSEEN_MARGIN - 1e-12);
        }
    }

    fn arb_model() -> impl Strategy<Value = (PursuitModel, Vec<usize>)> {
        (2usize..6).prop_flat_map(|v| {
            (
                prop::collection::vec(prop::collection::vec(0..v, 2..10), 1..10),
                prop::collection::vec(0..v, 2..12),
                Just(v),
            )
                .prop_map(|(seqs, probe, v)| (fit_pursuit(&seqs, vocab(v, 50.0), 0.5).unwrap(), probe))
        })
    }

    proptest! {
        #[test]
        fn rho2_is_a_lower_bound((m, probe) in arb_model()) {
            let r = m.rho2_from_sequence(&probe).unwrap().unwrap();
            for t in pair_decompose(&probe, 50.0) {
                prop_assert!(r.rho2 <= m.triplet_log_prob(t.from_idx, t.to_idx, t.length).unwrap());
            }
            let at = m.triplet_log_prob(r.prim_a, r.prim_b, (r.pos_b - r.pos_a) as f64 * 25.0).unwrap();
            prop_assert_eq!(at, r.rho2);
        }

        #[test]
        fn larger_deviation_is_penalised((m, _) in arb_model(), d1 in 0.0f64..200.0, extra in 0.01f64..200.0, sign in prop::bool::ANY) {
            let s = m.stats[0];
            let dir = if sign { 1.0 } else { -1.0 };
            let near = s.mean_length + dir * d1;
            let far = s.mean_length + dir * (d1 + extra);
            prop_assume!(near > 0.0 && far > 0.0);
            let a = m.triplet_log_prob(s.from_idx, s.to_idx, near).unwrap();
            let b = m.triplet_log_prob(s.from_idx, s.to_idx, far).unwrap();
            prop_assert!(b < a);
        }
    }
}
