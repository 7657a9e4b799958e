use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sysid::dynsys::{FeedbackSign, Preset};
use sysid::experiment::Scale;
use sysid::transfer::TransferKind;

#[derive(Debug, Parser)]
#[command(
    name = "sysid",
    version,
    about = "LSTM system identification with transfer learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a preset system and write train/test datasets.
    Gen(GenArgs),
    /// Train a network from scratch on a generated dataset.
    Train(TrainArgs),
    /// Pretrain on a source dataset and transfer to a target dataset.
    Transfer(TransferArgs),
    /// Compare a baseline and a transferred metrics file.
    Report(ReportArgs),
    /// Write a truth/prediction overlay for one sequence.
    Predict(PredictArgs),
    /// Run a full baseline-plus-transfer experiment from a config file.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Finetune,
    Freeze,
}

impl From<StrategyArg> for TransferKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Finetune => TransferKind::FineTune,
            StrategyArg::Freeze => TransferKind::Freeze,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_preset)]
    pub system: Preset,
    #[arg(long, default_value_t = 2021)]
    pub seed: u64,
    /// Size defaults for the flags below.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: ScaleArg,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub train_len: Option<usize>,
    #[arg(long)]
    pub test_len: Option<usize>,
    /// Feedback convention of the Wiener-Hammerstein front filter.
    #[arg(long, value_parser = parse_sign)]
    pub wh_front_feedback: Option<FeedbackSign>,
    /// Also write every container as CSV.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct TrainOpts {
    /// Network size defaults.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: ScaleArg,
    #[arg(long, value_delimiter = ',')]
    pub lstm_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub stop_tol: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub bptt_window: Option<usize>,
    #[arg(long)]
    pub epochs_per_group: Option<usize>,
    /// Constant MSE threshold for the epoch-count metric.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2021)]
    pub seed: u64,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub source_data: PathBuf,
    #[arg(long)]
    pub target_data: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 2021)]
    pub seed: u64,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub source_epochs: Option<usize>,
    /// Layers kept fixed on the target (freeze only).
    #[arg(long, value_delimiter = ',')]
    pub frozen: Option<Vec<String>>,
    /// Layers redrawn before the target phase (freeze only); defaults to
    /// every layer not frozen.
    #[arg(long, value_delimiter = ',')]
    pub reinit: Option<Vec<String>>,
    /// Seed for redrawn layers; defaults to seed + 1.
    #[arg(long)]
    pub reinit_seed: Option<u64>,
    /// Also train a scratch baseline on the target and compare.
    #[arg(long)]
    pub with_baseline: bool,
    /// Baseline metrics to measure the transferred run against.
    #[arg(long, conflicts_with = "with_baseline")]
    pub baseline_metrics: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub transferred: PathBuf,
    /// Write the comparison JSON here as well as printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seq_index: usize,
    /// Read from train group G instead of the test set.
    #[arg(long)]
    pub group: Option<usize>,
    /// Use the labels as predictions; checks the overlay plumbing.
    #[arg(long, conflicts_with = "model")]
    pub self_test: bool,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config; see `--print-config`.
    #[arg(long, required_unless_present = "print_config")]
    pub config: Option<PathBuf>,
    /// Print a default config for `--source`/`--target` and exit.
    #[arg(long)]
    pub print_config: bool,
    #[arg(long, value_parser = parse_preset, default_value = "lti3")]
    pub source: Preset,
    #[arg(long, value_parser = parse_preset, default_value = "lti2")]
    pub target: Preset,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: ScaleArg,
    #[arg(long, default_value_t = 2021)]
    pub seed: u64,
    /// Overrides the config's `out` field.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: sysid::Error| e.to_string())
}

fn parse_sign(s: &str) -> Result<FeedbackSign, String> {
    s.parse().map_err(|e: sysid::Error| e.to_string())
}
