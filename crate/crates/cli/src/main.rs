use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::Value;
use spcgs::commands::{self, GenConfig, Split, TrainArgs};
use spcgs::server::{serve, ServerState};
use spcgs::ErrorBody;
use spcgs_core::ablation::{AblationSettings, Preset};
use spcgs_core::io::{load_checkpoint, CameraRecord};
use spcgs_core::trainer::TrainConfig;
use spcgs_core::Error;

/// Semantic Gaussian splatting: dataset generation, training, rendering,
/// evaluation, ablations and an HTTP query service.
#[derive(Debug, Parser)]
#[command(name = "spcgs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic teacher scene and its dataset directory.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a checkpoint on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON-lines training log (default: `<out>.log.jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory of exported region masks to use instead of the teacher's labels.
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Render color, labels and an optional query overlay.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory holding `--view`.
        #[arg(long, requires = "view")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        view: Option<String>,
        /// JSON camera record, as stored in `cameras.json`.
        #[arg(long, conflicts_with = "dataset")]
        camera: Option<PathBuf>,
        #[arg(long)]
        query: Option<String>,
        #[arg(long)]
        overlay_alpha: Option<f64>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation preset (seed, spc, ogr, aug_color, erosion).
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        preset: Preset,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve `/meta` and `/render` for a checkpoint.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

/// A single camera record or a `cameras.json` list (first entry used).
#[derive(serde::Deserialize)]
#[serde(untagged)]
enum CameraFile {
    One(CameraRecord),
    List(Vec<CameraRecord>),
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("SPCGS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("SPCGS_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn emit(value: &Value, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(path) => commands::write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("json serializes"));
            Ok(())
        }
    }
}

fn to_value(v: &impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("json serializes")
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Gen { out, config, seed } => {
            let mut cfg: GenConfig = commands::load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            emit(&commands::gen(&cfg, &out)?, None)
        }
        Command::Train {
            dataset,
            out,
            config,
            seed,
            log,
            masks,
        } => {
            let mut cfg: TrainConfig = commands::load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let log = log.unwrap_or_else(|| commands::sibling(&out, ".log.jsonl"));
            let summary = commands::train(&TrainArgs {
                dataset: &dataset,
                out: &out,
                config: cfg,
                log: Some(&log),
                masks: masks.as_deref(),
            })?;
            emit(&summary, None)
        }
        Command::Render {
            checkpoint,
            out,
            dataset,
            view,
            camera,
            query,
            overlay_alpha,
        } => {
            let cam = match (dataset, view, camera) {
                (Some(d), Some(v), None) => commands::dataset_camera(&d, &v)?,
                (None, _, Some(c)) => {
                    let file: CameraFile = commands::read_json(&c)?;
                    match file {
                        CameraFile::One(r) => r.camera()?,
                        CameraFile::List(list) => list
                            .first()
                            .ok_or_else(|| Error::InvalidArgument(format!("{} lists no cameras", c.display())))?
                            .camera()?,
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "render needs --dataset with --view, or --camera".into(),
                    ))
                }
            };
            let ckpt = load_checkpoint(&checkpoint)?;
            emit(
                &commands::render_to_dir(&ckpt, &cam, query.as_deref(), overlay_alpha, &out)?,
                None,
            )
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            out,
        } => emit(&to_value(&commands::eval(&checkpoint, &dataset, split)?), out.as_deref()),
        Command::Ablate {
            dataset,
            preset,
            config,
            seed,
            out,
        } => {
            let mut settings: AblationSettings = commands::load_config(config.as_deref())?;
            if let Some(s) = seed {
                settings.seeds = vec![s];
            }
            let summary = commands::ablate(&dataset, preset, &settings, |run| {
                eprintln!("{}", serde_json::to_string(&run).expect("json serializes"));
            })?;
            emit(&summary, out.as_deref())
        }
        Command::Serve { checkpoint, port } => {
            let state = Arc::new(ServerState::new(load_checkpoint(&checkpoint)?)?);
            let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
                path: "<runtime>".into(),
                source: e,
            })?;
            rt.block_on(serve(state, addr)).map_err(|e| Error::Io {
                path: addr.to_string(),
                source: e,
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let body = ErrorBody::new("usage", e.to_string().trim_end()).to_json();
            println!("{}", serde_json::to_string_pretty(&body).expect("json serializes"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = ErrorBody::from(&e).to_json();
            println!("{}", serde_json::to_string_pretty(&body).expect("json serializes"));
            ExitCode::FAILURE
        }
    }
}
