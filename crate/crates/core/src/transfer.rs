//! Fine-tuning and layer-freezing transfer: pretrain on a source system,
//! transplant parameters, then train on the target under a layer mask.

use serde::{Deserialize, Serialize};

use crate::bench::{run_schedule, train, LearningCurve, StopReason, StopRule, TrainConfig};
use crate::data::{Dataset, DatasetBundle};
use crate::error::{Error, Result};
use crate::nn::{init_network, Network, TrainMask};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    FineTune,
    Freeze,
}

impl std::str::FromStr for TransferKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune" | "fine_tune" => Ok(Self::FineTune),
            "freeze" => Ok(Self::Freeze),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected finetune or freeze)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferStrategy {
    pub kind: TransferKind,
    pub source_epochs: usize,
    pub frozen_layers: Vec<String>,
    pub reinit_layers: Vec<String>,
    pub reinit_seed: u64,
}

impl TransferStrategy {
    /// 10 source epochs, then every layer keeps training.
    pub fn fine_tune() -> Self {
        Self {
            kind: TransferKind::FineTune,
            source_epochs: 10,
            frozen_layers: Vec::new(),
            reinit_layers: Vec::new(),
            reinit_seed: 0,
        }
    }

    /// 40 source epochs, LSTM1/LSTM2 frozen, LSTM3 and Dense redrawn from
    /// `reinit_seed`.
    pub fn freeze(reinit_seed: u64) -> Self {
        Self {
            kind: TransferKind::Freeze,
            source_epochs: 40,
            frozen_layers: vec!["LSTM1".into(), "LSTM2".into()],
            reinit_layers: vec!["LSTM3".into(), "Dense".into()],
            reinit_seed,
        }
    }

    pub fn for_kind(kind: TransferKind, reinit_seed: u64) -> Self {
        match kind {
            TransferKind::FineTune => Self::fine_tune(),
            TransferKind::Freeze => Self::freeze(reinit_seed),
        }
    }

    pub fn validate<T: Scalar>(&self, net: &Network<T>) -> Result<()> {
        match self.kind {
            TransferKind::FineTune => {
                if !self.frozen_layers.is_empty() || !self.reinit_layers.is_empty() {
                    return Err(Error::Config(
                        "fine-tuning takes no frozen or reinitialized layers".into(),
                    ));
                }
            }
            TransferKind::Freeze => {
                for name in self.frozen_layers.iter().chain(&self.reinit_layers) {
                    net.layer_index(name)?;
                }
                if let Some(both) = self
                    .frozen_layers
                    .iter()
                    .find(|n| self.reinit_layers.contains(n))
                {
                    return Err(Error::Config(format!(
                        "layer {both} is both frozen and reinitialized"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Trains exactly `strategy.source_epochs` epochs on the source domain.
pub fn pretrain<T: Scalar>(
    net: Network<T>,
    source: &DatasetBundle<T>,
    strategy: &TransferStrategy,
    cfg: &TrainConfig,
) -> Result<(Network<T>, LearningCurve)> {
    strategy.validate(&net)?;
    if strategy.source_epochs == 0 {
        return Ok((
            net,
            LearningCurve {
                records: Vec::new(),
                stopped_by: StopReason::FixedBudget,
            },
        ));
    }
    let mask = TrainMask::all(net.layer_count());
    run_schedule(
        net,
        &source.train,
        &source.test,
        &mask,
        cfg,
        StopRule::Fixed(strategy.source_epochs),
    )
}

/// Applies the strategy's parameter transplant and returns the target-phase
/// mask.
pub fn prepare_for_target<T: Scalar>(
    net: Network<T>,
    strategy: &TransferStrategy,
) -> Result<(Network<T>, TrainMask)> {
    strategy.validate(&net)?;
    match strategy.kind {
        TransferKind::FineTune => {
            let n = net.layer_count();
            Ok((net, TrainMask::all(n)))
        }
        TransferKind::Freeze => {
            let fresh = Network::init(
                net.in_dim(),
                &net.sizes(),
                net.out_dim(),
                strategy.reinit_seed,
            )?;
            let mut out = net;
            let mut flags = vec![false; out.layer_count()];
            for name in &strategy.reinit_layers {
                let k = out.layer_index(name)?;
                out.copy_layer_from(&fresh, k)?;
                flags[k] = true;
            }
            Ok((out, TrainMask::from_flags(flags)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub strategy: TransferStrategy,
    pub init_seed: u64,
    pub lstm_sizes: Vec<usize>,
    pub source_system: String,
    pub target_system: String,
    pub source_curve: LearningCurve,
    pub target_curve: LearningCurve,
    pub source_epochs: usize,
    pub target_epochs: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome<T> {
    pub report: TransferReport,
    pub pretrained: Network<T>,
    pub network: Network<T>,
    pub mask: TrainMask,
}

fn check_arity<T: Scalar>(a: &Dataset<T>, b: &Dataset<T>) -> Result<()> {
    if a.features().shape()[2] != b.features().shape()[2]
        || a.labels().shape()[2] != b.labels().shape()[2]
    {
        return Err(Error::Config(format!(
            "source and target arity differ: {}→{} vs {}→{}",
            a.features().shape()[2],
            a.labels().shape()[2],
            b.features().shape()[2],
            b.labels().shape()[2]
        )));
    }
    Ok(())
}

/// Pretrains a network initialized from `cfg.seed` on `source`, transplants
/// it, and trains on `target` until the stopping rule fires.
pub fn run_transfer<T: Scalar>(
    source: &DatasetBundle<T>,
    target: &DatasetBundle<T>,
    strategy: &TransferStrategy,
    sizes: &[usize],
    cfg: &TrainConfig,
) -> Result<TransferOutcome<T>> {
    for s in source.train.iter().chain(std::iter::once(&source.test)) {
        for t in target.train.iter().chain(std::iter::once(&target.test)) {
            check_arity(s, t)?;
        }
    }
    let net = init_network::<T>(sizes, cfg.seed)?;
    let (pretrained, source_curve) = pretrain(net, source, strategy, cfg)?;
    let (prepared, mask) = prepare_for_target(pretrained.clone(), strategy)?;
    let (network, target_curve) = train(prepared, &target.train, &target.test, &mask, cfg)?;
    let report = TransferReport {
        strategy: strategy.clone(),
        init_seed: cfg.seed,
        lstm_sizes: sizes.to_vec(),
        source_system: source.test.manifest().system.clone(),
        target_system: target.test.manifest().system.clone(),
        source_epochs: source_curve.len(),
        target_epochs: target_curve.len(),
        source_curve,
        target_curve,
        checkpoints: Vec::new(),
    };
    Ok(TransferOutcome {
        report,
        pretrained,
        network,
        mask,
    })
}
