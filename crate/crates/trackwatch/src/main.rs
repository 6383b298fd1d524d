use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use trackwatch_core::pipeline::{score_tracks, train, write_scores_csv, TrainConfig};
use trackwatch_core::track::{load_tracks, write_tracks};
use trackwatch_core::tracker::run_tracker;
use trackwatch_core::{model_io, pgm, TrackerConfig};

#[derive(Parser)]
#[command(name = "trackwatch", version, about = "Trajectory novelty detection for fixed-camera scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track features through a directory of frame_*.pgm images.
    Extract {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON tracker settings; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit a scene model to a track file.
    Train {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "50,75,110,150")]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 25.0)]
        dq: f64,
        /// Directional cluster radius in radians.
        #[arg(long, default_value_t = std::f64::consts::PI / 16.0)]
        dtheta: f64,
        #[arg(long, default_value_t = 0.0005)]
        quantile: f64,
    },
    /// Score tracks against a model and write a CSV.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a model over HTTP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
}

enum Failure {
    Validation(String),
    Io(String),
}

impl From<trackwatch_core::Error> for Failure {
    fn from(e: trackwatch_core::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Io(e.to_string())
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Extract { frames, out, config } => {
            let cfg: TrackerConfig = match config {
                Some(p) => serde_json::from_reader(open(&p)?)
                    .map_err(|e| Failure::Validation(format!("{}: {e}", p.display())))?,
                None => TrackerConfig::default(),
            };
            let frames = pgm::load_frame_dir(&frames)?;
            let tracks = run_tracker(&frames, &cfg)?;
            let mut w = create(&out)?;
            write_tracks(&mut w, &tracks)?;
            w.flush().map_err(io_err(&out))?;
            eprintln!("{} tracks from {} frames", tracks.len(), frames.len());
        }
        Command::Train {
            tracks,
            out,
            scales,
            dq,
            dtheta,
            quantile,
        } => {
            let mut cfg = TrainConfig {
                scales,
                delta_q: dq,
                delta_theta: dtheta,
                ..TrainConfig::default()
            };
            cfg.threshold.quantile = quantile;
            cfg.validate()?;
            let tracks = load_tracks(open(&tracks)?)?;
            let model = train(&tracks, &cfg)?;
            model_io::save_model_file(&out, &model)?;
            let m = &model.training_meta;
            eprintln!(
                "trained on {} of {} tracks ({} scoreable); thresholds r1={} r2={}",
                m.filtered_tracks,
                m.input_tracks,
                m.scoreable_tracks,
                model.threshold_r1(),
                model.threshold_r2()
            );
        }
        Command::Score { model, tracks, out } => {
            let model = model_io::load_model_file(&model)?;
            let tracks = load_tracks(open(&tracks)?)?;
            let records = score_tracks(&model, &tracks);
            let mut w = create(&out)?;
            write_scores_csv(&mut w, &records)?;
            w.flush().map_err(io_err(&out))?;
        }
        Command::Serve { model, bind, scene } => {
            let model = model_io::load_model_file(&model)?;
            let scene = scene.map(|p| pgm::read_pgm(&p)).transpose()?;
            let state = trackwatch::AppState::new(model, scene.as_ref())
                .map_err(|e| Failure::Validation(e.to_string()))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .map_err(|e| Failure::Io(format!("{bind}: {e}")))?;
                eprintln!("listening on {bind}");
                axum::serve(listener, trackwatch::router(Arc::new(state)))
                    .await
                    .map_err(|e| Failure::Io(e.to_string()))
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
