use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sysid::bench::{compare, ComparisonReport, LearningCurve, MetricsReport, TrainConfig};
use sysid::data::{Dataset, DatasetBundle, DatasetSpec};
use sysid::dynsys::{Preset, WH_FRONT_DEFAULT_SIGN};
use sysid::experiment::{build_bundle, run_baseline, run_experiment, ExperimentConfig, Scale};
use sysid::nn::{Network, IN_DIM, OUT_DIM};
use sysid::tensor::Tensor;
use sysid::transfer::{run_transfer, TransferKind, TransferStrategy};

use crate::args::{GenArgs, PredictArgs, ReportArgs, RunArgs, TrainArgs, TrainOpts, TransferArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: sysid::Error },
    #[error(transparent)]
    Core(#[from] sysid::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(r: sysid::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

fn at<T>(path: &Path, r: sysid::Result<T>) -> CliResult<T> {
    r.map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(sysid::Error::from(e).into()),
        _ => Ok(()),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    at(dir, fs::create_dir_all(dir).map_err(Into::into))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    at(path, fs::write(path, bytes).map_err(Into::into))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(sysid::Error::from)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<D> {
    let text = at(path, fs::read_to_string(path).map_err(Into::into))?;
    at(path, serde_json::from_str(&text).map_err(Into::into))
}

fn write_curve(path: &Path, curve: &LearningCurve) -> CliResult<()> {
    write_file(path, curve.to_csv_string().as_bytes())
}

fn save_dataset(path: &Path, ds: &Dataset<f64>, csv: bool) -> CliResult<()> {
    at(path, ds.save(path))?;
    if csv {
        let csv_path = path.with_extension("csv");
        let mut buf = Vec::new();
        ds.write_csv(&mut buf)?;
        write_file(&csv_path, &buf)?;
    }
    Ok(())
}

fn train_file(dir: &Path, g: usize) -> PathBuf {
    dir.join(format!("train_{g}.sidd"))
}

/// Reads `train_0.sidd, train_1.sidd, ...` and `test.sidd` from a `gen`
/// output directory.
pub fn load_bundle(dir: &Path) -> CliResult<DatasetBundle<f64>> {
    let mut train = Vec::new();
    loop {
        let path = train_file(dir, train.len());
        if !path.exists() {
            break;
        }
        train.push(at(&path, Dataset::load(&path))?);
    }
    if train.is_empty() {
        return Err(CliError::File {
            path: train_file(dir, 0),
            source: sysid::Error::Config("missing dataset".into()),
        });
    }
    let test_path = dir.join("test.sidd");
    let test = at(&test_path, Dataset::load(&test_path))?;
    Ok(DatasetBundle { train, test })
}

fn system_name(bundle: &DatasetBundle<f64>) -> &str {
    &bundle.test.manifest().system
}

pub fn gen(args: GenArgs) -> CliResult<()> {
    let base = Scale::from(args.preset).dataset(args.seed);
    let spec = DatasetSpec {
        n_groups: args.groups.unwrap_or(base.n_groups),
        group_size: args.group_size.unwrap_or(base.group_size),
        train_len: args.train_len.unwrap_or(base.train_len),
        test_len: args.test_len.unwrap_or(base.test_len),
        seed: args.seed,
    };
    usage(spec.validate())?;
    let sign = args.wh_front_feedback.unwrap_or(WH_FRONT_DEFAULT_SIGN);
    let bundle = build_bundle(args.system, &spec, sign)?;

    create_dir(&args.out)?;
    for (g, ds) in bundle.train.iter().enumerate() {
        save_dataset(&train_file(&args.out, g), ds, args.csv)?;
    }
    save_dataset(&args.out.join("test.sidd"), &bundle.test, args.csv)?;
    let manifests: Vec<_> = bundle.train.iter().map(|d| d.manifest()).collect();
    write_json(
        &args.out.join("manifest.json"),
        &json!({ "train": manifests, "test": bundle.test.manifest() }),
    )?;
    let wh_sign = (args.system == Preset::WhBenchmark).then_some(sign);
    write_json(
        &args.out.join("config.json"),
        &json!({ "command": "gen", "system": args.system, "wh_front_feedback": wh_sign, "dataset": spec }),
    )?;

    emit(&format!(
        "{}: train {} x [{}, {}, {}], test [{}, {}, {}] -> {}\n",
        args.system.name(),
        spec.n_groups,
        spec.group_size,
        spec.train_len,
        IN_DIM,
        spec.group_size,
        spec.test_len,
        IN_DIM,
        args.out.display()
    ))?;
    Ok(())
}

fn train_config(opts: &TrainOpts, seed: u64) -> CliResult<(TrainConfig, Vec<usize>)> {
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(v) = opts.stop_tol {
        cfg.stop_tol = v;
    }
    if let Some(v) = opts.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = opts.bptt_window {
        cfg.bptt_window = v;
    }
    if let Some(v) = opts.epochs_per_group {
        cfg.epochs_per_group = v;
    }
    if let Some(v) = opts.threshold {
        cfg.thresholds.constant_mse = v;
    }
    if let Some(v) = opts.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = opts.lr {
        cfg.adam.lr = v;
    }
    cfg.clip_norm = opts.clip_norm;
    usage(cfg.validate())?;
    let sizes = opts
        .lstm_sizes
        .clone()
        .unwrap_or_else(|| Scale::from(opts.preset).sizes());
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError::Usage(
            "--lstm-sizes needs at least one positive size".into(),
        ));
    }
    Ok((cfg, sizes))
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let (cfg, sizes) = train_config(&args.opts, args.seed)?;
    let data = load_bundle(&args.data)?;
    let (net, curve) = run_baseline(&data, &sizes, &cfg)?;
    let metrics = MetricsReport::baseline(&curve, cfg.thresholds.constant_mse)?;

    create_dir(&args.out)?;
    let config = json!({
        "command": "train",
        "data": data.test.manifest().spec,
        "system": system_name(&data),
        "lstm_sizes": sizes,
        "train": cfg,
    });
    write_curve(&args.out.join("curve.csv"), &curve)?;
    write_json(&args.out.join("metrics.json"), &metrics)?;
    let ckpt = args.out.join("model.sidm");
    at(&ckpt, net.save_checkpoint(&ckpt, cfg.seed, config.clone()))?;
    write_json(&args.out.join("config.json"), &config)?;

    emit(&format!(
        "{} epochs ({:?}), min test MSE {}, epochs to {}: {}\n",
        metrics.epochs_run,
        curve.stopped_by,
        sysid::fmt_full(metrics.own_minimal_test_mse),
        cfg.thresholds.constant_mse,
        fmt_epochs(metrics.epochs_to_constant)
    ))?;
    Ok(())
}

fn fmt_epochs(e: Option<usize>) -> String {
    e.map_or_else(|| "not reached".into(), |n| n.to_string())
}

fn strategy_from(args: &TransferArgs, sizes: &[usize]) -> CliResult<TransferStrategy> {
    let kind = TransferKind::from(args.strategy);
    let mut s =
        TransferStrategy::for_kind(kind, args.reinit_seed.unwrap_or(args.seed.wrapping_add(1)));
    if let Some(n) = args.source_epochs {
        s.source_epochs = n;
    }
    match kind {
        TransferKind::FineTune => {
            if args.frozen.is_some() || args.reinit.is_some() {
                return Err(CliError::Usage(
                    "--frozen and --reinit apply to --strategy freeze only".into(),
                ));
            }
        }
        TransferKind::Freeze => {
            let names = sysid::nn::layer_names(sizes.len());
            if let Some(frozen) = &args.frozen {
                s.frozen_layers = frozen.clone();
            }
            s.reinit_layers = match &args.reinit {
                Some(r) => r.clone(),
                None if args.frozen.is_some() => names
                    .into_iter()
                    .filter(|n| !s.frozen_layers.contains(n))
                    .collect(),
                None => s.reinit_layers,
            };
        }
    }
    let probe = usage(Network::<f64>::zeros(IN_DIM, sizes, OUT_DIM))?;
    usage(s.validate(&probe))?;
    Ok(s)
}

pub fn transfer(args: TransferArgs) -> CliResult<()> {
    let (cfg, sizes) = train_config(&args.opts, args.seed)?;
    let strategy = strategy_from(&args, &sizes)?;
    let source = load_bundle(&args.source_data)?;
    let target = load_bundle(&args.target_data)?;
    let reference: Option<MetricsReport> = args
        .baseline_metrics
        .as_deref()
        .map(read_json)
        .transpose()?;

    let (outcome, baseline) = rayon::join(
        || run_transfer(&source, &target, &strategy, &sizes, &cfg),
        || {
            args.with_baseline
                .then(|| run_baseline(&target, &sizes, &cfg))
                .transpose()
        },
    );
    let mut outcome = outcome?;
    let baseline = baseline?;
    outcome.report.checkpoints = vec!["pretrained.sidm".into(), "model.sidm".into()];
    let report = &outcome.report;

    create_dir(&args.out)?;
    let config = json!({
        "command": "transfer",
        "source": { "system": system_name(&source), "data": source.test.manifest().spec },
        "target": { "system": system_name(&target), "data": target.test.manifest().spec },
        "lstm_sizes": sizes,
        "strategy": strategy,
        "train": cfg,
        "with_baseline": args.with_baseline,
    });
    write_curve(&args.out.join("source_curve.csv"), &report.source_curve)?;
    write_curve(&args.out.join("target_curve.csv"), &report.target_curve)?;
    write_json(&args.out.join("report.json"), report)?;
    let pre = args.out.join("pretrained.sidm");
    at(
        &pre,
        outcome.pretrained.save_checkpoint(
            &pre,
            cfg.seed,
            json!({ "phase": "source", "config": config }),
        ),
    )?;
    let model = args.out.join("model.sidm");
    at(
        &model,
        outcome.network.save_checkpoint(
            &model,
            cfg.seed,
            json!({ "phase": "target", "config": config }),
        ),
    )?;
    write_json(&args.out.join("config.json"), &config)?;

    let reference = match (baseline, reference) {
        (Some((_, curve)), _) => {
            let m = MetricsReport::baseline(&curve, cfg.thresholds.constant_mse)?;
            write_curve(&args.out.join("baseline_curve.csv"), &curve)?;
            write_json(&args.out.join("baseline_metrics.json"), &m)?;
            Some(m)
        }
        (None, r) => r,
    };
    let metrics = match &reference {
        Some(r) => MetricsReport::against(&report.target_curve, r)?,
        None => MetricsReport::baseline(&report.target_curve, cfg.thresholds.constant_mse)?,
    };
    write_json(&args.out.join("metrics.json"), &metrics)?;

    emit(&format!(
        "{} -> {} ({:?}): {} source epochs, {} target epochs, min test MSE {}\n",
        report.source_system,
        report.target_system,
        strategy.kind,
        report.source_epochs,
        report.target_epochs,
        sysid::fmt_full(metrics.own_minimal_test_mse)
    ))?;
    if let Some(r) = &reference {
        let cmp = compare(r, &metrics)?;
        write_json(&args.out.join("comparison.json"), &cmp)?;
        emit(&cmp.table())?;
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> CliResult<()> {
    let baseline: MetricsReport = read_json(&args.baseline)?;
    let transferred: MetricsReport = read_json(&args.transferred)?;
    let cmp: ComparisonReport = compare(&baseline, &transferred)?;
    emit(&cmp.table())?;
    match &args.out {
        Some(path) => write_json(path, &cmp)?,
        None => emit(&(serde_json::to_string_pretty(&cmp).map_err(sysid::Error::from)? + "\n"))?,
    }
    Ok(())
}

/// `t,y_true,y_pred,error` rows for one sequence.
pub fn overlay_csv(y_true: &[f64], y_pred: &[f64]) -> String {
    let mut out = String::from("t,y_true,y_pred,error\n");
    for (t, (a, b)) in y_true.iter().zip(y_pred).enumerate() {
        out.push_str(&format!(
            "{t},{},{},{}\n",
            sysid::fmt_full(*a),
            sysid::fmt_full(*b),
            sysid::fmt_full(b - a)
        ));
    }
    out
}

pub fn predict(args: PredictArgs) -> CliResult<()> {
    let path = match args.group {
        Some(g) => train_file(&args.data, g),
        None => args.data.join("test.sidd"),
    };
    let ds = at(&path, Dataset::<f64>::load(&path))?;
    if args.seq_index >= ds.batch() {
        return Err(CliError::Usage(format!(
            "--seq-index {} out of range (dataset has {} sequences)",
            args.seq_index,
            ds.batch()
        )));
    }
    let y_true = ds.outputs(args.seq_index).to_vec();
    let y_pred = if args.self_test {
        y_true.clone()
    } else {
        let Some(model) = &args.model else {
            return Err(CliError::Usage(
                "--model is required unless --self-test is given".into(),
            ));
        };
        let (net, _) = at(model, Network::<f64>::load_checkpoint(model))?;
        let features = Tensor::from_vec(
            &[1, ds.seq_len(), IN_DIM],
            ds.features().row(args.seq_index).to_vec(),
        )?;
        let (pred, _) = net.predict(&features, None)?;
        pred.as_slice().to_vec()
    };
    let csv = overlay_csv(&y_true, &y_pred);
    match &args.out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => emit(&csv)?,
    }
    let n = y_true.len() as f64;
    let mse = y_true
        .iter()
        .zip(&y_pred)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        / n;
    eprintln!("sequence {} MSE {}", args.seq_index, sysid::fmt_full(mse));
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ConfigFile {
    #[serde(flatten)]
    experiment: ExperimentConfig,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn kind_dir(kind: TransferKind) -> &'static str {
    match kind {
        TransferKind::FineTune => "finetune",
        TransferKind::Freeze => "freeze",
    }
}

pub fn run(args: RunArgs) -> CliResult<()> {
    if args.print_config {
        let cfg = ExperimentConfig::new(args.preset.into(), args.source, args.target, args.seed);
        emit(&(serde_json::to_string_pretty(&cfg).map_err(sysid::Error::from)? + "\n"))?;
        return Ok(());
    }
    let path = args.config.as_deref().expect("clap enforces --config");
    let file: ConfigFile = read_json(path)?;
    let out = args.out.or(file.out).ok_or_else(|| {
        CliError::Usage("no output directory: pass --out or set `out` in the config".into())
    })?;
    let cfg = file.experiment;
    usage(cfg.dataset.validate())?;
    usage(cfg.train.validate())?;

    let result = run_experiment(&cfg)?;
    create_dir(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    write_curve(&out.join("baseline_curve.csv"), &result.baseline_curve)?;
    write_json(&out.join("baseline_metrics.json"), &result.baseline_metrics)?;
    for arm in &result.arms {
        let dir = out.join(kind_dir(arm.kind));
        create_dir(&dir)?;
        write_json(&dir.join("config.json"), &cfg)?;
        write_curve(&dir.join("source_curve.csv"), &arm.report.source_curve)?;
        write_curve(&dir.join("target_curve.csv"), &arm.report.target_curve)?;
        write_json(&dir.join("report.json"), &arm.report)?;
        write_json(&dir.join("metrics.json"), &arm.metrics)?;
        write_json(&dir.join("comparison.json"), &arm.comparison)?;
        emit(&format!("{}:\n", kind_dir(arm.kind)))?;
        emit(&arm.comparison.table())?;
    }
    Ok(())
}
