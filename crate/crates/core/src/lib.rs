//! Scene-specific trajectory novelty detection.
//!
//! Feature tracks observed by a fixed camera are cut into short linear
//! *tracklets*, clustered into a vocabulary of motion primitives, and used to
//! fit two models of normal motion:
//!
//! * [`markov`]: an ensemble of first-order Markov chains, one per
//!   characteristic scale, whose average log-likelihoods are mapped onto a
//!   common distribution and combined by a minimum (conformance `rho1`).
//! * [`pursuit`]: a model of path lengths travelled between every pair of
//!   primitives of a track (conformance `rho2`), which also identifies the
//!   worst-explained primitive pair.
//!
//! [`pipeline`] ties the pieces together (training, threshold selection,
//! scoring, persistence). [`tracker`] extracts tracks from grayscale frames.
//!
//! Data-parallel loops (per-feature tracking, per-track canonization and
//! scoring) run on rayon when the default `parallel` feature is enabled and
//! fall back to plain iterators otherwise. Results are identical either way.

pub mod error;
pub mod markov;
pub mod model_io;
mod par;
pub mod pgm;
pub mod pipeline;
pub mod pursuit;
pub mod synth;
pub mod track;
pub mod tracker;
pub mod tracklet;

pub use error::{Error, Result};
pub use markov::{ChainModel, EmpiricalCdf, EnsembleModel};
pub use pipeline::{SceneModel, ScoreRecord, ThresholdConfig, TrainConfig};
pub use pursuit::{PairStats, PursuitModel};
pub use track::{FilterConfig, Track, TrackPoint};
pub use tracker::{Frame, TrackerConfig};
pub use tracklet::{Primitive, PrimitiveVocabulary, ScaleConfig, Tracklet};
