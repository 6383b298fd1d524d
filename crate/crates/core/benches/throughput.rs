// Compares a single-thread rayon pool against the default pool on the
// data-parallel phases. Build with `--no-default-features` to measure the
// plain-iterator fallback instead; the two pool sizes then behave the same.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

use trackwatch_core::pipeline::{score_tracks, train, TrainConfig};
use trackwatch_core::synth::{shifted, smooth_texture, CorridorWorld};
use trackwatch_core::tracker::{run_tracker, TrackerConfig};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default_threads = rayon::current_num_threads();
    let mut out = vec![(
        "1-thread".to_string(),
        ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
    )];
    out.push((
        format!("{default_threads}-threads"),
        ThreadPoolBuilder::new().num_threads(default_threads).build().unwrap(),
    ));
    out
}

fn bench_scoring(c: &mut Criterion) {
    let world = CorridorWorld::default();
    let model = train(&world.normal_tracks(600, 1, "n"), &TrainConfig::default()).unwrap();
    let probes = world.normal_tracks(400, 2, "p");

    let mut group = c.benchmark_group("score_tracks");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(&name), &probes, |b, probes| {
            b.iter(|| pool.install(|| score_tracks(&model, probes)))
        });
    }
    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let world = CorridorWorld::default();
    let tracks = world.normal_tracks(600, 3, "n");
    let cfg = TrainConfig::default();

    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(&name), &tracks, |b, tracks| {
            b.iter(|| pool.install(|| train(tracks, &cfg).unwrap()))
        });
    }
    group.finish();
}

fn bench_tracking(c: &mut Criterion) {
    let base = smooth_texture(160, 120, 2.0, 7);
    let frames: Vec<_> = (0..6).map(|i| shifted(&base, 0.8 * i as f64, 0.3 * i as f64)).collect();
    let cfg = TrackerConfig {
        max_features: 150,
        ..TrackerConfig::default()
    };

    let mut group = c.benchmark_group("run_tracker");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(&name), &frames, |b, frames| {
            b.iter(|| pool.install(|| run_tracker(frames, &cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_scoring, bench_training, bench_tracking);
criterion_main!(benches);
