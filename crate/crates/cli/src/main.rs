//! `dvfi`: augment septuplets, generate synthetic data, train the toy D-map
//! estimator, evaluate it and inspect D-maps.

mod commands;
mod config;
mod panel;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dvfi_core::image::FlipAxis;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "dvfi", version, about = "Discontinuity-aware frame interpolation toolkit")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-sample parallelism (results do not depend on it).
    #[arg(long, global = true, env = "DVFI_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply figure/text mixing to a directory of septuplets.
    Augment(AugmentArgs),
    /// Generate a synthetic dataset with exact ground truth.
    GenSynth(GenSynthArgs),
    /// Train the D-map estimator on a dataset.
    Train(TrainArgs),
    /// Run a trained estimator over a dataset and score it.
    Eval(EvalArgs),
    /// Render a side-by-side panel of a sample and its D-map.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Directory whose subdirectories each hold one septuplet.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Crop as `top,left,height,width`.
    #[arg(long, value_delimiter = ',', value_name = "T,L,H,W")]
    crop: Option<Vec<usize>>,
    /// Flip applied before mixing (repeatable, applied in order).
    #[arg(long, value_enum)]
    flip: Vec<FlipArg>,
    #[arg(long)]
    p_fm: Option<f64>,
    #[arg(long)]
    p_tm: Option<f64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FlipArg {
    Horizontal,
    Vertical,
    Temporal,
}

impl From<FlipArg> for FlipAxis {
    fn from(f: FlipArg) -> Self {
        match f {
            FlipArg::Horizontal => FlipAxis::Horizontal,
            FlipArg::Vertical => FlipAxis::Vertical,
            FlipArg::Temporal => FlipAxis::Temporal,
        }
    }
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Number of samples.
    #[arg(long, short = 'n')]
    count: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Minimum fraction of target pixels covered by overlays.
    #[arg(long)]
    min_coverage: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset root containing `manifest.json`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Total number of SGD steps (including resumed ones).
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Square random crop side per training example.
    #[arg(long)]
    crop: Option<usize>,
    /// Continuous interpolator name.
    #[arg(long)]
    interpolator: Option<String>,
    /// Previous `train` output directory to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset root containing `manifest.json`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// `train` output directory holding the checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// D-map binarization threshold for IoU.
    #[arg(long)]
    threshold: Option<f64>,
    /// Score the ground truth against itself.
    #[arg(long)]
    sanity: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Sample directory (seven frames, optionally `dgt.png`).
    #[arg(long)]
    input: Option<PathBuf>,
    /// D-map image to show instead of the sample's `dgt.png`.
    #[arg(long)]
    dmap: Option<PathBuf>,
}

fn set_if<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn merge(cli: Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set_if(&mut cfg.seed, cli.seed);
    if cli.out.is_some() {
        cfg.output = cli.out;
    }
    let (name, input) = match cli.command {
        Command::Augment(a) => {
            if let Some(c) = a.crop {
                let c: [usize; 4] = c
                    .try_into()
                    .map_err(|c: Vec<usize>| anyhow::anyhow!("--crop needs 4 values, got {}", c.len()))?;
                cfg.augment.crop = Some(c);
            }
            if !a.flip.is_empty() {
                cfg.augment.flips = a.flip.into_iter().map(FlipAxis::from).collect();
            }
            set_if(&mut cfg.ftm.p_fm, a.p_fm);
            set_if(&mut cfg.ftm.p_tm, a.p_tm);
            ("augment", a.input)
        }
        Command::GenSynth(g) => {
            set_if(&mut cfg.synth.count, g.count);
            set_if(&mut cfg.synth.params.height, g.height);
            set_if(&mut cfg.synth.params.width, g.width);
            set_if(&mut cfg.synth.params.min_coverage, g.min_coverage);
            ("gen-synth", None)
        }
        Command::Train(t) => {
            set_if(&mut cfg.train.steps, t.steps);
            set_if(&mut cfg.train.learning_rate, t.lr);
            set_if(&mut cfg.train.batch_size, t.batch_size);
            if t.crop.is_some() {
                cfg.train.crop = t.crop;
            }
            set_if(&mut cfg.train.interpolator, t.interpolator);
            if t.resume.is_some() {
                cfg.train_io.resume = t.resume;
            }
            ("train", t.input)
        }
        Command::Eval(e) => {
            if e.checkpoint.is_some() {
                cfg.eval.checkpoint = e.checkpoint;
            }
            set_if(&mut cfg.eval.threshold, e.threshold);
            cfg.eval.sanity |= e.sanity;
            ("eval", e.input)
        }
        Command::Inspect(i) => {
            if i.dmap.is_some() {
                cfg.inspect.dmap = i.dmap;
            }
            ("inspect", i.input)
        }
    };
    cfg.command = name.to_owned();
    if input.is_some() {
        cfg.input = input;
    }
    // a single seed drives every command
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = merge(cli)?;
    commands::run(&cfg)
}
