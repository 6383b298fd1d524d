//! Multi-scale ensemble of first-order Markov chains over primitive
//! sequences.
//!
//! Each scale has its own vocabulary and chain. A track's average
//! log-likelihood under chain `k` is pushed through that chain's empirical
//! CDF and pulled back through the inverse CDF of the finest scale, so every
//! scale reports on a common axis. The conformance `rho1` is the minimum over
//! scales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::Track;
use crate::tracklet::{canonize_track, CanonizeError, PrimitiveVocabulary};

/// Additive pseudo-count used for priors and transitions unless configured.
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub vocab: PrimitiveVocabulary,
    /// `log P(first primitive = i)`.
    pub log_prior: Vec<f64>,
    /// Row-major `V x V`; entry `(i, j)` is `log P(j | i)`.
    pub log_transition: Vec<f64>,
    pub smoothing_alpha: f64,
}

impl ChainModel {
    pub fn vocab_size(&self) -> usize {
        self.log_prior.len()
    }

    #[inline]
    pub fn log_transition(&self, from: usize, to: usize) -> f64 {
        self.log_transition[from * self.vocab_size() + to]
    }

    fn check_indices(&self, seq: &[usize]) -> Result<()> {
        let v = self.vocab_size();
        match seq.iter().find(|&&s| s >= v) {
            Some(s) => Err(Error::validation(format!("primitive index {s} out of range for {v} primitives"))),
            None => Ok(()),
        }
    }
}

/// Estimates a chain with additive smoothing.
///
/// The prior counts only sequence-initial primitives; transitions count every
/// adjacent pair. Empty sequences contribute nothing. With `alpha = 0`, a row
/// whose head was never followed by anything is left uniform.
pub fn fit_chain(sequences: &[Vec<usize>], vocab: PrimitiveVocabulary, alpha: f64) -> Result<ChainModel> {
    let v = vocab.len();
    if v == 0 {
        return Err(Error::validation("vocabulary is empty"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::validation("smoothing alpha must be finite and non-negative"));
    }
    let mut first = vec![0.0f64; v];
    let mut pair = vec![0.0f64; v * v];
    let mut head = vec![0.0f64; v];
    let mut n_seq = 0.0;
    for seq in sequences {
        if let Some(&s) = seq.iter().find(|&&s| s >= v) {
            return Err(Error::validation(format!("primitive index {s} out of range for {v} primitives")));
        }
        let Some(&s0) = seq.first() else { continue };
        first[s0] += 1.0;
        n_seq += 1.0;
        for w in seq.windows(2) {
            pair[w[0] * v + w[1]] += 1.0;
            head[w[0]] += 1.0;
        }
    }
    if n_seq == 0.0 {
        return Err(Error::validation("no non-empty sequence to fit"));
    }
    let vf = v as f64;
    let prior_den = n_seq + alpha * vf;
    let log_prior = first.iter().map(|&c| ((c + alpha) / prior_den).ln()).collect();
    let mut log_transition = vec![0.0; v * v];
    for i in 0..v {
        let den = head[i] + alpha * vf;
        for j in 0..v {
            log_transition[i * v + j] = if den > 0.0 {
                ((pair[i * v + j] + alpha) / den).ln()
            } else {
                (1.0 / vf).ln()
            };
        }
    }
    Ok(ChainModel {
        vocab,
        log_prior,
        log_transition,
        smoothing_alpha: alpha,
    })
}

/// Length-normalised log-likelihood of a primitive sequence.
pub fn average_loglik(chain: &ChainModel, seq: &[usize]) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::Degenerate("empty sequence has no likelihood".into()));
    }
    chain.check_indices(seq)?;
    let mut total = chain.log_prior[seq[0]];
    for w in seq.windows(2) {
        total += chain.log_transition(w[0], w[1]);
    }
    Ok(total / seq.len() as f64)
}

/// Empirical distribution of training scores.
///
/// Sorted samples `x_1 <= ... <= x_n` sit at plotting positions
/// `i / (n + 1)`; values in between are interpolated linearly and values
/// outside the sample range are clamped to the end positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted_samples: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("empirical CDF needs at least one sample"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::validation("empirical CDF samples must be finite"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self {
            sorted_samples: samples,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted_samples
    }

    pub fn len(&self) -> usize {
        self.sorted_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_samples.is_empty()
    }

    /// Interpolated probability of a score not exceeding `r`.
    pub fn value(&self, r: f64) -> f64 {
        let x = &self.sorted_samples;
        let n = x.len();
        let step = 1.0 / (n as f64 + 1.0);
        if r <= x[0] {
            return step;
        }
        if r >= x[n - 1] {
            return n as f64 * step;
        }
        // x[i - 1] <= r < x[i], with i in 1..n
        let i = x.partition_point(|&s| s <= r);
        let (lo, hi) = (x[i - 1], x[i]);
        let frac = (r - lo) / (hi - lo);
        (i as f64 + frac) * step
    }

    /// Score at which [`EmpiricalCdf::value`] reaches `u`, for `0 < u < 1`.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::validation(format!("probability {u} outside (0, 1)")));
        }
        let x = &self.sorted_samples;
        let n = x.len();
        let t = u * (n as f64 + 1.0);
        if t <= 1.0 {
            return Ok(x[0]);
        }
        if t >= n as f64 {
            return Ok(x[n - 1]);
        }
        let i = t.floor() as usize;
        let frac = t - i as f64;
        Ok(x[i - 1] + frac * (x[i] - x[i - 1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    /// Chains ordered by strictly increasing `delta_d`.
    pub chains: Vec<ChainModel>,
    pub cdfs: Vec<EmpiricalCdf>,
    pub threshold_r1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleScore {
    /// Position of the scale in the ensemble (0 is the finest).
    pub index: usize,
    pub delta_d: f64,
    /// Average log-likelihood under this scale's chain.
    pub r: f64,
    /// `r` mapped onto the finest scale's distribution.
    pub r_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rho1 {
    pub rho1: f64,
    /// Scales at which the track produced at least one tracklet.
    pub per_scale: Vec<ScaleScore>,
}

/// Why a track could not be scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Unscorable {
    #[error("track is too short for the finest scale")]
    TooShort,
    #[error("track needs at least two tracklets at the finest scale")]
    TooFewTracklets,
    #[error("a tracklet is orthogonal to every primitive of the finest scale")]
    NoCompatiblePrimitive,
}

impl From<CanonizeError> for Unscorable {
    fn from(e: CanonizeError) -> Self {
        match e {
            CanonizeError::TooShort => Unscorable::TooShort,
            CanonizeError::AssignmentImpossible { .. } => Unscorable::NoCompatiblePrimitive,
        }
    }
}

impl EnsembleModel {
    /// Fits one chain per scale and each chain's score distribution.
    ///
    /// `sequences[k][t]` is track `t` canonized at scale `k`, or `None` when
    /// the track produced no sequence there. Each CDF is built from the
    /// average log-likelihoods of that scale's own training sequences.
    pub fn fit(
        vocabs: Vec<PrimitiveVocabulary>,
        sequences: &[Vec<Option<Vec<usize>>>],
        alpha: f64,
    ) -> Result<Self> {
        if vocabs.is_empty() || vocabs.len() != sequences.len() {
            return Err(Error::validation("need one sequence set per scale"));
        }
        if vocabs.windows(2).any(|w| !(w[0].scale.delta_d < w[1].scale.delta_d)) {
            return Err(Error::validation("scales must be strictly increasing"));
        }
        let mut chains = Vec::with_capacity(vocabs.len());
        let mut cdfs = Vec::with_capacity(vocabs.len());
        for (vocab, seqs) in vocabs.into_iter().zip(sequences) {
            let delta_d = vocab.scale.delta_d;
            let present: Vec<Vec<usize>> = seqs.iter().flatten().filter(|s| !s.is_empty()).cloned().collect();
            if present.is_empty() {
                return Err(Error::validation(format!("no training sequence at scale {delta_d}")));
            }
            let chain = fit_chain(&present, vocab, alpha)?;
            let scores = present
                .iter()
                .map(|s| average_loglik(&chain, s))
                .collect::<Result<Vec<_>>>()?;
            cdfs.push(EmpiricalCdf::new(scores)?);
            chains.push(chain);
        }
        Ok(Self {
            chains,
            cdfs,
            threshold_r1: f64::NEG_INFINITY,
        })
    }

    pub fn scales(&self) -> Vec<f64> {
        self.chains.iter().map(|c| c.vocab.scale.delta_d).collect()
    }

    /// Canonizes a track at every scale. Scale 0 failures are returned as
    /// errors; coarser scales that cannot express the track yield `None`.
    pub fn canonize(&self, track: &Track) -> std::result::Result<Vec<Option<Vec<usize>>>, Unscorable> {
        let mut out = Vec::with_capacity(self.chains.len());
        for (k, chain) in self.chains.iter().enumerate() {
            match canonize_track(track, &chain.vocab) {
                Ok(seq) => out.push(Some(seq)),
                Err(e) if k == 0 => return Err(e.into()),
                Err(_) => out.push(None),
            }
        }
        Ok(out)
    }

    /// `rho1` from precomputed per-scale sequences (as from
    /// [`EnsembleModel::canonize`]).
    pub fn rho1_from_sequences(&self, sequences: &[Option<Vec<usize>>]) -> Result<Rho1> {
        match sequences.first() {
            Some(Some(s)) if !s.is_empty() => {}
            _ => return Err(Error::Degenerate("no sequence at the finest scale".into())),
        }
        let reference = &self.cdfs[0];
        let mut per_scale = Vec::new();
        for (k, seq) in sequences.iter().enumerate().take(self.chains.len()) {
            let Some(seq) = seq.as_deref().filter(|s| !s.is_empty()) else { continue };
            let r = average_loglik(&self.chains[k], seq)?;
            let r_hat = reference.inverse(self.cdfs[k].value(r))?;
            per_scale.push(ScaleScore {
                index: k,
                delta_d: self.chains[k].vocab.scale.delta_d,
                r,
                r_hat,
            });
        }
        let rho1 = per_scale.iter().map(|s| s.r_hat).fold(f64::INFINITY, f64::min);
        Ok(Rho1 { rho1, per_scale })
    }

    /// Canonizes `track` and computes its conformance `rho1`.
    pub fn conformance_rho1(&self, track: &Track) -> std::result::Result<Rho1, Unscorable> {
        let seqs = self.canonize(track)?;
        self.rho1_from_sequences(&seqs).map_err(|_| Unscorable::TooShort)
    }
}
