use std::fs::{self, File};
use std::path::Path;
use std::process::{Command, Output};

use trackwatch_core::pgm::write_pgm;
use trackwatch_core::pipeline::{score_tracks, write_scores_csv, CSV_HEADER};
use trackwatch_core::synth::{shifted, smooth_texture, CorridorWorld};
use trackwatch_core::track::{load_tracks, write_tracks};
use trackwatch_core::model_io;

fn trackwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trackwatch")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_corpus(path: &Path, n: usize, seed: u64) {
    let tracks = CorridorWorld::default().normal_tracks(n, seed, "t");
    write_tracks(File::create(path).unwrap(), &tracks).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_then_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = dir.path().join("tracks.jsonl");
    let probes = dir.path().join("new.jsonl");
    let model = dir.path().join("model.json");
    let csv = dir.path().join("scores.csv");
    write_corpus(&tracks, 500, 1);
    write_corpus(&probes, 60, 2);

    let out = trackwatch(&["train", "--tracks", s(&tracks), "--out", s(&model)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = trackwatch(&["score", "--model", s(&model), "--tracks", s(&probes), "--out", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let loaded = model_io::load_model_file(&model).unwrap();
    let probe_tracks = load_tracks(std::io::BufReader::new(File::open(&probes).unwrap())).unwrap();
    let mut expected = Vec::new();
    write_scores_csv(&mut expected, &score_tracks(&loaded, &probe_tracks)).unwrap();
    let got = fs::read(&csv).unwrap();
    assert_eq!(got, expected);
    let text = String::from_utf8(got).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(text.lines().count(), 61);
}

#[test]
fn training_flags_reach_the_model_and_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = dir.path().join("tracks.jsonl");
    write_corpus(&tracks, 300, 3);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = trackwatch(&[
            "train", "--tracks", s(&tracks), "--out", s(out), "--scales", "40,80", "--dq", "20",
            "--dtheta", "0.2", "--quantile", "0.01",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let m = model_io::load_model_file(&a).unwrap();
    let cfg = &m.training_meta.config;
    assert_eq!(cfg.scales, vec![40.0, 80.0]);
    assert_eq!(cfg.delta_q, 20.0);
    assert_eq!(cfg.delta_theta, 0.2);
    assert_eq!(cfg.threshold.quantile, 0.01);
}

#[test]
fn extract_writes_tracks_from_a_frame_directory() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    let base = smooth_texture(96, 80, 2.0, 11);
    for i in 0..5 {
        let f = shifted(&base, 1.0 * i as f64, 0.5 * i as f64);
        write_pgm(&frames.join(format!("frame_{i:04}.pgm")), &f).unwrap();
    }
    let config = dir.path().join("tracker.json");
    fs::write(&config, r#"{"max_features": 40}"#).unwrap();
    let out_path = dir.path().join("tracks.jsonl");
    let out = trackwatch(&[
        "extract", "--frames", s(&frames), "--out", s(&out_path), "--config", s(&config),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let tracks = load_tracks(std::io::BufReader::new(File::open(&out_path).unwrap())).unwrap();
    assert!(!tracks.is_empty());
    // Features born in frame 0 that survive drift by (1, 0.5) per frame.
    let full: Vec<_> = tracks.iter().filter(|t| t.len() == 5).collect();
    assert!(!full.is_empty());
    for t in full {
        let (a, b) = (t.points()[0], t.points()[4]);
        assert!((b.x - a.x - 4.0).abs() < 0.2 && (b.y - a.y - 2.0).abs() < 0.2, "{a:?} -> {b:?}");
    }
}

#[test]
fn missing_files_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("missing.jsonl");
    let model = dir.path().join("model.json");
    assert_eq!(code(&trackwatch(&["train", "--tracks", s(&nowhere), "--out", s(&model)])), 3);
    assert_eq!(
        code(&trackwatch(&["score", "--model", s(&nowhere), "--tracks", s(&nowhere), "--out", s(&model)])),
        3
    );
    assert_eq!(code(&trackwatch(&["serve", "--model", s(&nowhere)])), 3);
}

#[test]
fn invalid_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = dir.path().join("tracks.jsonl");
    let model = dir.path().join("model.json");
    write_corpus(&tracks, 20, 4);
    let bad_q = trackwatch(&["train", "--tracks", s(&tracks), "--out", s(&model), "--quantile", "1.5"]);
    assert_eq!(code(&bad_q), 2);
    let bad_scales = trackwatch(&["train", "--tracks", s(&tracks), "--out", s(&model), "--scales", "80,40"]);
    assert_eq!(code(&bad_scales), 2);

    let garbage = dir.path().join("garbage.jsonl");
    fs::write(&garbage, "{\"id\": \"a\", \"points\": [[0, 1.0, 2.0]]}\nnot json\n").unwrap();
    assert_eq!(code(&trackwatch(&["train", "--tracks", s(&garbage), "--out", s(&model)])), 2);

    let truncated = dir.path().join("truncated.json");
    fs::write(&truncated, "{\"ensemble\": {").unwrap();
    let out = trackwatch(&["score", "--model", s(&truncated), "--tracks", s(&tracks), "--out", s(&model)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));

    assert_eq!(code(&trackwatch(&["train", "--bogus"])), 2);
}
