//! A complete scratch-versus-transfer experiment described by one
//! serializable config.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{compare, train, ComparisonReport, LearningCurve, MetricsReport, TrainConfig};
use crate::data::{build_dataset, DatasetBundle, DatasetSpec};
use crate::dynsys::{FeedbackSign, Preset, WH_FRONT_DEFAULT_SIGN};
use crate::error::{Error, Result};
use crate::nn::{init_network, Network, TrainMask, DESK_SIZES, PAPER_SIZES};
use crate::transfer::{run_transfer, TransferKind, TransferReport, TransferStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Small datasets and an 8/16/32 network.
    Desk,
    /// 5 × 32 × 5000 training data, 32 × 10000 test data, 16/64/128 network.
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected desk or paper)"
            ))),
        }
    }
}

impl Scale {
    pub fn dataset(self, seed: u64) -> DatasetSpec {
        match self {
            Scale::Desk => DatasetSpec::desk(seed),
            Scale::Paper => DatasetSpec::paper(seed),
        }
    }

    pub fn sizes(self) -> Vec<usize> {
        match self {
            Scale::Desk => DESK_SIZES.to_vec(),
            Scale::Paper => PAPER_SIZES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: Preset,
    pub target: Preset,
    #[serde(default = "default_wh_sign")]
    pub wh_front_feedback: FeedbackSign,
    /// Target dataset; the source dataset uses the same sizes with
    /// `source_data_seed`.
    pub dataset: DatasetSpec,
    pub source_data_seed: u64,
    pub lstm_sizes: Vec<usize>,
    pub train: TrainConfig,
    pub strategies: Vec<TransferStrategy>,
}

fn default_wh_sign() -> FeedbackSign {
    WH_FRONT_DEFAULT_SIGN
}

impl ExperimentConfig {
    /// Scratch baseline plus fine-tune and freeze arms. Everything derives
    /// from `seed`: target data `seed`, source data `seed + 1`, network
    /// init `seed`, freeze reinitialization `seed + 1`.
    pub fn new(scale: Scale, source: Preset, target: Preset, seed: u64) -> Self {
        Self {
            source,
            target,
            wh_front_feedback: WH_FRONT_DEFAULT_SIGN,
            dataset: scale.dataset(seed),
            source_data_seed: seed.wrapping_add(1),
            lstm_sizes: scale.sizes(),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            strategies: vec![
                TransferStrategy::fine_tune(),
                TransferStrategy::freeze(seed.wrapping_add(1)),
            ],
        }
    }

    pub fn source_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.source_data_seed,
            ..self.dataset
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub kind: TransferKind,
    pub report: TransferReport,
    pub metrics: MetricsReport,
    pub comparison: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub baseline_curve: LearningCurve,
    pub baseline_metrics: MetricsReport,
    pub arms: Vec<ArmResult>,
}

pub fn build_bundle(
    preset: Preset,
    spec: &DatasetSpec,
    wh_sign: FeedbackSign,
) -> Result<DatasetBundle<f64>> {
    build_dataset(&preset.build_with::<f64>(wh_sign), preset.name(), spec)
}

/// Scratch training on the target from `cfg.seed`.
pub fn run_baseline(
    target: &DatasetBundle<f64>,
    sizes: &[usize],
    cfg: &TrainConfig,
) -> Result<(Network<f64>, LearningCurve)> {
    let net = init_network::<f64>(sizes, cfg.seed)?;
    let mask = TrainMask::all(net.layer_count());
    train(net, &target.train, &target.test, &mask, cfg)
}

/// Builds both datasets, trains the baseline and every strategy arm
/// (concurrently), and compares each arm against the baseline's thresholds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let source = build_bundle(cfg.source, &cfg.source_spec(), cfg.wh_front_feedback)?;
    let target = build_bundle(cfg.target, &cfg.dataset, cfg.wh_front_feedback)?;

    let (baseline, arms) = rayon::join(
        || run_baseline(&target, &cfg.lstm_sizes, &cfg.train),
        || {
            cfg.strategies
                .par_iter()
                .map(|s| run_transfer(&source, &target, s, &cfg.lstm_sizes, &cfg.train))
                .collect::<Result<Vec<_>>>()
        },
    );
    let (_, baseline_curve) = baseline?;
    let baseline_metrics =
        MetricsReport::baseline(&baseline_curve, cfg.train.thresholds.constant_mse)?;
    let arms = arms?
        .into_iter()
        .map(|out| {
            let metrics = MetricsReport::against(&out.report.target_curve, &baseline_metrics)?;
            let comparison = compare(&baseline_metrics, &metrics)?;
            Ok(ArmResult {
                kind: out.report.strategy.kind,
                report: out.report,
                metrics,
                comparison,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        baseline_curve,
        baseline_metrics,
        arms,
    })
}
