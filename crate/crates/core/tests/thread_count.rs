// Results must not depend on how many threads the data-parallel phases use.

use rayon::ThreadPoolBuilder;

use trackwatch_core::model_io;
use trackwatch_core::pipeline::{score_tracks, train, write_scores_csv, TrainConfig};
use trackwatch_core::synth::{shifted, smooth_texture, CorridorWorld};
use trackwatch_core::tracker::{run_tracker, TrackerConfig};

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

#[test]
fn model_and_scores_are_identical_for_one_and_four_threads() {
    let world = CorridorWorld::default();
    let tracks = world.normal_tracks(400, 8, "n");
    let probes = world.corner_tracks(50, 9, "c");
    let run = || {
        let m = train(&tracks, &TrainConfig::default()).unwrap();
        let mut csv = Vec::new();
        write_scores_csv(&mut csv, &score_tracks(&m, &probes)).unwrap();
        (model_io::to_bytes(&m).unwrap(), csv)
    };
    assert_eq!(with_threads(1, run), with_threads(4, run));
}

#[test]
fn tracks_are_identical_for_one_and_four_threads() {
    let base = smooth_texture(120, 100, 2.0, 3);
    let frames: Vec<_> = (0..4).map(|i| shifted(&base, 0.7 * i as f64, -0.4 * i as f64)).collect();
    let cfg = TrackerConfig::default();
    let run = || run_tracker(&frames, &cfg).unwrap();
    assert_eq!(with_threads(1, run), with_threads(4, run));
}
