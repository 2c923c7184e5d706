//! Per-command flags. Every flag is optional so a `--config` file can
//! supply it; `or` fills unset flags from the file section.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use avr_core::pipeline::PipelineConfig;

use crate::Size;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub synth: SynthArgs,
    pub process: ProcessArgs,
    pub verify: VerifyArgs,
    pub serve: ServeArgs,
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub targets: Option<usize>,
    /// Episode directory to create.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frame size, WIDTHxHEIGHT.
    #[arg(long)]
    pub size: Option<Size>,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Shoot every n-th frame with no target in view.
    #[arg(long)]
    pub blank_every: Option<usize>,
}

impl SynthArgs {
    pub fn or(self, f: Self) -> Self {
        Self {
            seed: self.seed.or(f.seed),
            frames: self.frames.or(f.frames),
            targets: self.targets.or(f.targets),
            out: self.out.or(f.out),
            size: self.size.or(f.size),
            fps: self.fps.or(f.fps),
            blank_every: self.blank_every.or(f.blank_every),
        }
    }
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub smax: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// network, bicubic or none.
    #[arg(long)]
    pub sr: Option<String>,
    /// hold_last or passthrough.
    #[arg(long)]
    pub miss_policy: Option<String>,
    /// Detection label to track; empty tracks any.
    #[arg(long)]
    pub task: Option<String>,
    /// SR network weights (JSON).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Seed for generated SR weights when --weights is absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Full pipeline configuration; config file only.
    #[arg(skip)]
    pub pipeline: Option<PipelineConfig>,
}

impl ProcessArgs {
    pub fn or(self, f: Self) -> Self {
        Self {
            input: self.input.or(f.input),
            output: self.output.or(f.output),
            smax: self.smax.or(f.smax),
            alpha: self.alpha.or(f.alpha),
            sr: self.sr.or(f.sr),
            miss_policy: self.miss_policy.or(f.miss_policy),
            task: self.task.or(f.task),
            weights: self.weights.or(f.weights),
            seed: self.seed.or(f.seed),
            pipeline: self.pipeline.or(f.pipeline),
        }
    }
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyArgs {
    #[arg(long)]
    pub episode: Option<PathBuf>,
}

impl VerifyArgs {
    pub fn or(self, f: Self) -> Self {
        Self {
            episode: self.episode.or(f.episode),
        }
    }
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    /// Stream size, WIDTHxHEIGHT.
    #[arg(long)]
    pub size: Option<Size>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub targets: Option<usize>,
    /// Where recorded episodes are written.
    #[arg(long)]
    pub record_dir: Option<PathBuf>,
}

impl ServeArgs {
    pub fn or(self, f: Self) -> Self {
        Self {
            port: self.port.or(f.port),
            host: self.host.or(f.host),
            size: self.size.or(f.size),
            seed: self.seed.or(f.seed),
            targets: self.targets.or(f.targets),
            record_dir: self.record_dir.or(f.record_dir),
        }
    }
}
