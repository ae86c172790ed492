//! Command-line front end. Every stage reads and writes documented files so
//! stages can be run, replaced or checked one at a time.

mod commands;
mod layout;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;
pub use layout::{dataset_sequences, load_dataset};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(
    name = "crowdflow",
    version,
    about = "Crowd counting, head localization and tracking"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic sequences (frames, annotations, metadata).
    Generate(GenerateArgs),
    /// Write ground-truth density and localization maps.
    Gtmaps(GtmapsArgs),
    /// Train a model and write its checkpoint and log.
    Train(TrainArgs),
    /// Predict density and localization maps for every frame.
    Infer(InferArgs),
    /// Detect heads in predicted maps and link them into tracklets.
    Track(TrackArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scene configuration JSON; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the six-sequence attribute suite instead of one scene.
    #[arg(long)]
    pub suite: bool,
    /// Number of sequences to write, seeds counting up from `--seed`.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GtmapsArgs {
    /// A sequence directory or a directory of sequences.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub sigma_loc: f64,
    /// Use one fixed density kernel width instead of the adaptive one.
    #[arg(long)]
    pub fixed_sigma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[command(flatten)]
    pub ablation: AblationArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct AblationArgs {
    /// Drop the coarse scales and their fusion.
    #[arg(long)]
    pub no_ms: bool,
    /// Drop the localization heads.
    #[arg(long)]
    pub no_loc: bool,
    /// Drop the association head.
    #[arg(long)]
    pub no_ass: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Override the checkpoint's temporal gap.
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Prediction directory (per-sequence map folders) or a detections CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub theta: f64,
    #[arg(long, default_value_t = 3)]
    pub radius: usize,
    #[arg(long, default_value_t = 25.0)]
    pub gate: f64,
    #[arg(long, default_value_t = 2.0)]
    pub entry_cost: f64,
    #[arg(long, default_value_t = 2.0)]
    pub exit_cost: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction directory with one folder per sequence.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth sequence or dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// NMS threshold for sequences without a detections file.
    #[arg(long, default_value_t = 0.25)]
    pub theta: f64,
    #[arg(long)]
    pub out: PathBuf,
}
