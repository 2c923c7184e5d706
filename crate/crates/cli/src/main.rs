//! `avr`: batch and service entry points.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage or I/O error.
//! Summaries are JSON on stdout; logs go to stderr (`RUST_LOG`).

mod config;
mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use avr_core::dataset::DatasetError;
use avr_core::pipeline::{self, MissPolicy, PipelineConfig, PipelineError, SrMode};
use avr_core::synth::{self, SynthConfig, SynthError};
use avr_core::FrameSize;
use avr_teleop::{Server, Session, SessionConfig};

use config::{ConfigFile, ProcessArgs, ServeArgs, SynthArgs, VerifyArgs};

#[derive(Parser, Debug)]
#[command(name = "avr", version, about = "Active-vision PTZ camera tooling")]
struct Cli {
    /// JSON file with per-command sections; flags win on conflict.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic episode from a seeded scene.
    Synth(SynthArgs),
    /// Run the zoom pipeline over an episode's top-view frames.
    Process(ProcessArgs),
    /// Validate an episode and re-scan its frames against the format.
    Verify(VerifyArgs),
    /// Serve the teleoperation WebSocket session.
    Serve(ServeArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Validation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Usage(_) | Self::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage: {m}"),
            Self::Io(m) => write!(f, "{m}"),
            Self::Validation(m) => write!(f, "invalid: {m}"),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Validation { .. } | DatasetError::Parse { .. } | DatasetError::Manifest(_) | DatasetError::Aggregate { .. } => {
                Self::Validation(e.to_string())
            }
            DatasetError::Image { .. } => Self::Validation(e.to_string()),
            DatasetError::NotFound(_) | DatasetError::Io { .. } => Self::Io(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Dataset(d) => d.into(),
            PipelineError::Io { .. } => Self::Io(e.to_string()),
            other => Self::Usage(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Dataset(d) => d.into(),
            SynthError::Scene(s) => Self::Usage(s.to_string()),
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("summary serializes"));
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let out = args.out.ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        seed: args.seed.unwrap_or(defaults.seed),
        frames: args.frames.unwrap_or(defaults.frames),
        targets: args.targets.unwrap_or(defaults.targets),
        out_size: args.size.map_or(defaults.out_size, |s| s.0),
        frame_rate_hz: args.fps.unwrap_or(defaults.frame_rate_hz),
        blank_every: args.blank_every,
    };
    if out.exists() {
        return Err(CliError::Io(format!("{} already exists", out.display())));
    }
    log::info!("synthesizing {} frames (seed {}) into {}", cfg.frames, cfg.seed, out.display());
    let m = synth::synth_episode(&cfg, &out)?;
    print_json(&serde_json::json!({
        "episode": out,
        "name": m.name,
        "records": m.record_count,
        "frame_size": m.frame_size,
        "seed": cfg.seed,
    }));
    Ok(())
}

fn pipeline_config(args: &ProcessArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = args.pipeline.clone().unwrap_or_default();
    if let Some(v) = args.smax {
        cfg.zoom.s_max = v;
    }
    if let Some(v) = args.alpha {
        cfg.zoom.alpha = v;
    }
    if let Some(s) = &args.sr {
        cfg.sr = SrMode::parse(s).ok_or_else(|| CliError::Usage(format!("--sr {s:?}: expected network, bicubic or none")))?;
    }
    if let Some(s) = &args.miss_policy {
        cfg.miss_policy = MissPolicy::parse(s)
            .ok_or_else(|| CliError::Usage(format!("--miss-policy {s:?}: expected hold_last or passthrough")))?;
    }
    if let Some(t) = &args.task {
        cfg.task_label = t.clone();
    }
    if let Some(w) = &args.weights {
        cfg.sr_weights = Some(w.clone());
    }
    if let Some(s) = args.seed {
        cfg.sr_seed = s;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_process(args: ProcessArgs) -> Result<(), CliError> {
    let input = args.input.clone().ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let output = args.output.clone().ok_or_else(|| CliError::Usage("--output is required".into()))?;
    let cfg = pipeline_config(&args)?;
    if !input.is_dir() {
        return Err(CliError::Io(format!("input episode {} not found", input.display())));
    }
    if output.exists() {
        return Err(CliError::Io(format!("{} already exists", output.display())));
    }
    log::info!("processing {} -> {} ({:?}, {:?})", input.display(), output.display(), cfg.sr, cfg.miss_policy);
    let summary = pipeline::process_episode(&input, &output, &cfg)?;
    print_json(&summary);
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let episode = args.episode.ok_or_else(|| CliError::Usage("--episode is required".into()))?;
    let report = verify::verify_episode(&episode)?;
    print_json(&report);
    match report.problem() {
        Some(p) => Err(CliError::Validation(p)),
        None => Ok(()),
    }
}

fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let defaults = SessionConfig::default();
    let cfg = SessionConfig {
        out_size: args.size.map_or(defaults.out_size, |s| s.0),
        seed: args.seed.unwrap_or(defaults.seed),
        targets: args.targets.unwrap_or(defaults.targets),
        record_root: args.record_dir.clone().unwrap_or(defaults.record_root),
        frame_rate_hz: defaults.frame_rate_hz,
    };
    let host = args.host.clone().unwrap_or_else(|| "127.0.0.1".into());
    let port = args.port.unwrap_or(8080);
    let session = Session::new(cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| CliError::Io(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        print_json(&serde_json::json!({ "listening": format!("ws://{addr}/session") }));
        log::info!("serving on {addr}; ctrl-c to stop");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("interrupt received, shutting down");
        };
        Server::new(session)
            .serve(listener, shutdown)
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a.or(file.synth)),
        Command::Process(a) => cmd_process(a.or(file.process)),
        Command::Verify(a) => cmd_verify(a.or(file.verify)),
        Command::Serve(a) => cmd_serve(a.or(file.serve)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("avr: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// `WIDTHxHEIGHT`, e.g. `640x360`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Size(pub FrameSize);

impl std::str::FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("{s:?} is not WIDTHxHEIGHT"))?;
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{s:?}: {e}"));
        FrameSize::new(parse(w)?, parse(h)?).map(Size).map_err(|e| e.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for Size {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
