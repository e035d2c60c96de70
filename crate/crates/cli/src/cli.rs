use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Preset;

/// Environment variable naming the root directory for run outputs.
pub const RUN_DIR_ENV: &str = "VIDGEN_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "vidgen", version, about = "Desk-scale text-to-video training and data pipeline")]
pub struct Cli {
    /// Output directory for this run (default: $VIDGEN_RUN_DIR/<run name>, or runs/<run name>).
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a toy model (stage preset, VAE adaptation, or the 2D toy).
    Train(TrainArgs),
    /// Sample from a checkpoint.
    Sample(SampleArgs),
    /// Reward fine-tuning through the sampler.
    Rlhf(RlhfArgs),
    /// Run the curation pipeline over a corpus of CVPX clips.
    Curate(CurateArgs),
    /// Serve encoded feature batches, or spool them to disk.
    Serve(ServeArgs),
    /// Sequence/data-parallel equivalence and traffic table.
    BenchParallel(BenchArgs),
    /// Evaluation utilities.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Run name under the run-directory root.
    #[arg(long)]
    pub run_name: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Two-Gaussian 2D toy instead of a video preset.
    #[arg(long, conflicts_with = "preset")]
    pub toy2d: bool,
    /// Checkpoint to start from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// vae-adapt: also continue with the original encoder as a control.
    #[arg(long)]
    pub control: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub prompt: Vec<String>,
    /// Sample count for non-video models.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub sample_steps: Option<usize>,
    #[arg(long)]
    pub shift: Option<f64>,
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub run_name: Option<String>,
    /// Write the per-step sampler trace of the first sample.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct RlhfArgs {
    #[command(flatten)]
    pub common: Common,
    /// Video checkpoint to tune (a fresh model otherwise).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Gradient-enabled sampler steps per rollout.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Write the built-in fixture corpus into --corpus first.
    #[arg(long)]
    pub write_fixture: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub fg_weight: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub cut_threshold: Option<f64>,
    #[arg(long)]
    pub blur_min: Option<f64>,
    #[arg(long)]
    pub motion_min: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub bind: String,
    #[arg(long, requires = "corpus")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Serve procedurally generated clips instead of a manifest.
    #[arg(long, conflicts_with = "manifest")]
    pub synthetic: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2)]
    pub world_size: u32,
    /// Write framed batches for steps 0..--steps here instead of serving.
    #[arg(long, requires = "steps")]
    pub spool_dir: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct EvalArgs {
    /// GSB ratio from good, same and bad counts.
    #[arg(long, num_args = 3, value_names = ["GOOD", "SAME", "BAD"])]
    pub gsb: Option<Vec<u64>>,
    /// W2 between two sample CSVs.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub w2: Option<Vec<PathBuf>>,
}
