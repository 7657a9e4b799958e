//! Training scheduler, stopping rule, test evaluation, epoch-count metrics
//! and raw-versus-transferred comparisons.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{mse, AdamConfig, AdamState, BatchState, Network, TrainMask};
use crate::scalar::{CompensatedSum, Scalar};

/// Which MSE the stopping rule watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopSignal {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub constant_mse: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { constant_mse: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Consecutive epochs spent on one group before moving to the next.
    pub epochs_per_group: usize,
    /// Stop once `|e_n - e_{n-1}| < stop_tol`.
    pub stop_tol: f64,
    pub max_epochs: usize,
    /// Truncated-BPTT window; one optimizer step per window.
    pub bptt_window: usize,
    pub thresholds: Thresholds,
    /// Evaluate the test set every this many epochs; in between the last
    /// value is repeated and the stopping rule is not consulted.
    pub eval_every: usize,
    /// Network initialization seed.
    pub seed: u64,
    pub stop_on: StopSignal,
    pub adam: AdamConfig,
    /// Optional global-norm gradient clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_group: 10,
            stop_tol: 5e-5,
            max_epochs: 200,
            bptt_window: 100,
            thresholds: Thresholds::default(),
            eval_every: 1,
            seed: 2021,
            stop_on: StopSignal::Test,
            adam: AdamConfig::default(),
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_tol >= 0.0) {
            return Err(Error::Config(format!(
                "stop_tol must be non-negative, got {}",
                self.stop_tol
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.epochs_per_group == 0 || self.bptt_window == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "epochs_per_group, bptt_window and eval_every must be at least 1".into(),
            ));
        }
        if !(self.thresholds.constant_mse > 0.0) {
            return Err(Error::Config(
                "constant MSE threshold must be positive".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The stopping rule fired.
    Converged,
    MaxEpochs,
    /// A fixed epoch budget was requested (source-domain pretraining).
    FixedBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub records: Vec<EpochRecord>,
    pub stopped_by: StopReason,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn test_mses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.test_mse).collect()
    }

    pub fn min_test_mse(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_mse).reduce(f64::min)
    }

    pub fn converged_at(&self) -> Option<usize> {
        (self.stopped_by == StopReason::Converged).then_some(self.records.len())
    }

    pub fn from_test_mses(values: &[f64]) -> Self {
        Self {
            records: values
                .iter()
                .enumerate()
                .map(|(i, &v)| EpochRecord {
                    epoch: i + 1,
                    train_mse: v,
                    test_mse: v,
                })
                .collect(),
            stopped_by: StopReason::MaxEpochs,
        }
    }

    /// `epoch,train_mse,test_mse` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch,train_mse,test_mse")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{}",
                r.epoch,
                crate::fmt_full(r.train_mse),
                crate::fmt_full(r.test_mse)
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut v = Vec::new();
        self.write_csv(&mut v)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(v).unwrap()
    }
}

/// When a schedule ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stopping criterion from the config, bounded by `max_epochs`.
    Criterion,
    /// Exactly this many epochs.
    Fixed(usize),
}

/// Test-set MSE over every sequence and time step, from zero state.
pub fn evaluate<T: Scalar>(net: &Network<T>, test: &Dataset<T>) -> Result<f64> {
    let (pred, _) = net.predict(test.features(), None)?;
    Ok(mse(&pred, test.labels())?.to_f64_lossless())
}

fn check_groups<T: Scalar>(
    net: &Network<T>,
    groups: &[Dataset<T>],
    test: &Dataset<T>,
) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Config(
            "at least one training group is required".into(),
        ));
    }
    for d in groups.iter().chain(std::iter::once(test)) {
        if d.batch() == 0 || d.seq_len() == 0 {
            return Err(Error::Config("empty dataset group".into()));
        }
        if d.features().shape()[2] != net.in_dim() {
            return Err(Error::dim(
                "features",
                net.in_dim(),
                d.features().shape()[2],
            ));
        }
    }
    Ok(())
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFiniteActivation { .. } | Error::NonFinite { .. } => Error::Divergence { epoch },
        other => other,
    }
}

/// One pass over `group` in BPTT windows; returns the mean training MSE of
/// the pass (each window's loss taken before its update).
pub fn train_epoch<T: Scalar>(
    net: &mut Network<T>,
    adam: &mut AdamState<T>,
    group: &Dataset<T>,
    mask: &TrainMask,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let (batch, len) = (group.batch(), group.seq_len());
    let mut state: Option<BatchState<T>> = None;
    let mut total = CompensatedSum::<f64>::new();
    let mut start = 0;
    while start < len {
        let w = cfg.bptt_window.min(len - start);
        let (f, y) = group.window(start, w);
        let (pred, cache) = net
            .forward(&f, state.as_ref())
            .map_err(|e| diverged(e, epoch))?;
        let loss = mse(&pred, &y)?.to_f64_lossless();
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let mut grads = net.backward(&cache, &y, Some(mask))?;
        if let Some(limit) = cfg.clip_norm {
            let norm = grads.global_norm().to_f64_lossless();
            if norm > limit {
                grads.scale(T::of(limit / norm));
            }
        }
        if !grads.global_norm().is_finite() {
            return Err(Error::Divergence { epoch });
        }
        state = Some(cache.final_state());
        adam.step(net, &grads, mask)?;
        total.add(loss * (batch * w) as f64);
        start += w;
    }
    Ok(total.value() / (batch * len) as f64)
}

/// Runs the round-robin group schedule with a fresh optimizer.
pub fn run_schedule<T: Scalar>(
    mut net: Network<T>,
    groups: &[Dataset<T>],
    test: &Dataset<T>,
    mask: &TrainMask,
    cfg: &TrainConfig,
    rule: StopRule,
) -> Result<(Network<T>, LearningCurve)> {
    cfg.validate()?;
    check_groups(&net, groups, test)?;
    if mask.len() != net.layer_count() {
        return Err(Error::dim("mask", net.layer_count(), mask.len()));
    }
    let budget = match rule {
        StopRule::Criterion => cfg.max_epochs,
        StopRule::Fixed(n) => n,
    };
    let mut adam = AdamState::new(&net, cfg.adam);
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut last_eval: Option<f64> = None;
    let mut prev_signal: Option<f64> = None;
    let mut stopped_by = match rule {
        StopRule::Criterion => StopReason::MaxEpochs,
        StopRule::Fixed(_) => StopReason::FixedBudget,
    };
    for epoch in 1..=budget {
        let group = &groups[((epoch - 1) / cfg.epochs_per_group) % groups.len()];
        let train_mse = train_epoch(&mut net, &mut adam, group, mask, cfg, epoch)?;
        let evaluated = epoch % cfg.eval_every == 0 || epoch == 1 || last_eval.is_none();
        let test_mse = if evaluated {
            let v = evaluate(&net, test).map_err(|e| diverged(e, epoch))?;
            if !v.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            last_eval = Some(v);
            v
        } else {
            last_eval.unwrap()
        };
        records.push(EpochRecord {
            epoch,
            train_mse,
            test_mse,
        });
        if rule == StopRule::Criterion && (evaluated || cfg.stop_on == StopSignal::Train) {
            let signal = match cfg.stop_on {
                StopSignal::Test => test_mse,
                StopSignal::Train => train_mse,
            };
            if let Some(prev) = prev_signal {
                if (signal - prev).abs() < cfg.stop_tol {
                    stopped_by = StopReason::Converged;
                    break;
                }
            }
            prev_signal = Some(signal);
        }
    }
    Ok((
        net,
        LearningCurve {
            records,
            stopped_by,
        },
    ))
}

/// Trains until the stopping criterion fires or `max_epochs` elapse.
pub fn train<T: Scalar>(
    net: Network<T>,
    groups: &[Dataset<T>],
    test: &Dataset<T>,
    mask: &TrainMask,
    cfg: &TrainConfig,
) -> Result<(Network<T>, LearningCurve)> {
    run_schedule(net, groups, test, mask, cfg, StopRule::Criterion)
}

/// First 1-based epoch whose test MSE is at or below `tau`.
pub fn epochs_to_threshold(curve: &LearningCurve, tau: f64) -> Option<usize> {
    curve
        .records
        .iter()
        .find(|r| r.test_mse <= tau)
        .map(|r| r.epoch)
}

/// Twice the minimum test MSE of `baseline`.
pub fn dynamic_threshold(baseline: &LearningCurve) -> Result<f64> {
    baseline
        .min_test_mse()
        .map(|m| 2.0 * m)
        .ok_or_else(|| Error::Parameter("dynamic threshold of an empty curve".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Minimum the dynamic threshold derives from: the run's own minimum for
    /// a baseline, the baseline's minimum for a transferred run.
    pub minimal_test_mse: f64,
    pub dynamic_threshold: f64,
    pub constant_threshold: f64,
    /// This run's own minimum test MSE.
    pub own_minimal_test_mse: f64,
    pub epochs_to_constant: Option<usize>,
    pub epochs_to_dynamic: Option<usize>,
    pub converged_at: Option<usize>,
    pub epochs_run: usize,
}

impl MetricsReport {
    /// Metrics of a baseline run against its own dynamic threshold.
    pub fn baseline(curve: &LearningCurve, constant_threshold: f64) -> Result<Self> {
        let min = curve
            .min_test_mse()
            .ok_or_else(|| Error::Parameter("metrics of an empty curve".into()))?;
        Self::with_reference(curve, constant_threshold, min)
    }

    /// Metrics of a run measured against `baseline`'s thresholds.
    pub fn against(curve: &LearningCurve, baseline: &MetricsReport) -> Result<Self> {
        Self::with_reference(
            curve,
            baseline.constant_threshold,
            baseline.minimal_test_mse,
        )
    }

    pub fn with_reference(
        curve: &LearningCurve,
        constant_threshold: f64,
        reference_min: f64,
    ) -> Result<Self> {
        let own = curve
            .min_test_mse()
            .ok_or_else(|| Error::Parameter("metrics of an empty curve".into()))?;
        let dynamic = 2.0 * reference_min;
        Ok(Self {
            minimal_test_mse: reference_min,
            dynamic_threshold: dynamic,
            constant_threshold,
            own_minimal_test_mse: own,
            epochs_to_constant: epochs_to_threshold(curve, constant_threshold),
            epochs_to_dynamic: epochs_to_threshold(curve, dynamic),
            converged_at: curve.converged_at(),
            epochs_run: curve.len(),
        })
    }
}

/// `(raw - transferred) / raw`, as a percentage.
pub fn reduction_percent(raw: usize, transferred: usize) -> f64 {
    (raw as f64 - transferred as f64) / raw as f64 * 100.0
}

/// Rounds half away from zero to `decimals` places.
pub fn round_to(x: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (x * k).round() / k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub threshold: f64,
    pub raw_epochs: Option<usize>,
    pub transferred_epochs: Option<usize>,
    /// `None` when either run never reached the threshold.
    pub reduction_pct: Option<f64>,
    pub comparable: bool,
}

impl MetricComparison {
    fn new(threshold: f64, raw: Option<usize>, transferred: Option<usize>) -> Self {
        let reduction_pct = match (raw, transferred) {
            (Some(r), Some(t)) if r > 0 => Some(reduction_percent(r, t)),
            _ => None,
        };
        Self {
            threshold,
            raw_epochs: raw,
            transferred_epochs: transferred,
            comparable: reduction_pct.is_some(),
            reduction_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub constant: MetricComparison,
    pub dynamic: MetricComparison,
}

/// Percent reductions of the transferred run against the raw one. Both
/// reports must share thresholds.
pub fn compare(raw: &MetricsReport, transferred: &MetricsReport) -> Result<ComparisonReport> {
    if raw.constant_threshold != transferred.constant_threshold {
        return Err(Error::ThresholdMismatch {
            baseline: raw.constant_threshold,
            transferred: transferred.constant_threshold,
        });
    }
    if raw.dynamic_threshold != transferred.dynamic_threshold {
        return Err(Error::ThresholdMismatch {
            baseline: raw.dynamic_threshold,
            transferred: transferred.dynamic_threshold,
        });
    }
    Ok(ComparisonReport {
        constant: MetricComparison::new(
            raw.constant_threshold,
            raw.epochs_to_constant,
            transferred.epochs_to_constant,
        ),
        dynamic: MetricComparison::new(
            raw.dynamic_threshold,
            raw.epochs_to_dynamic,
            transferred.epochs_to_dynamic,
        ),
    })
}

impl ComparisonReport {
    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let cell = |v: Option<usize>| v.map_or("never".to_string(), |e| e.to_string());
        let mut s = format!(
            "{:<10} {:>12} {:>10} {:>12} {:>11}\n",
            "metric", "threshold", "raw", "transferred", "reduction"
        );
        for (name, m) in [("constant", &self.constant), ("dynamic", &self.dynamic)] {
            let red = match m.reduction_pct {
                Some(p) => format!("{:+.1}%", round_to(p, 1)),
                None => "n/a".to_string(),
            };
            s.push_str(&format!(
                "{:<10} {:>12.4e} {:>10} {:>12} {:>11}\n",
                name,
                m.threshold,
                cell(m.raw_epochs),
                cell(m.transferred_epochs),
                red
            ));
        }
        s
    }
}

/// Median with unreached thresholds ranked above every count.
pub fn median_epochs(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values
        .iter()
        .map(|x| x.map_or(f64::INFINITY, |e| e as f64))
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    m.is_finite().then_some(m)
}
