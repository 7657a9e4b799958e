//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use sysid::bench::{compare, dynamic_threshold, round_to, LearningCurve, MetricsReport};
use sysid::data::{sample_truncated_normal, Dataset, TruncatedNormalSpec};
use sysid::dynsys::{
    cheby2_source, cheby3_back, cheby3_front, lti3_source, simulate, DiodeSaturation, IirFilter,
    Preset,
};
use sysid::experiment::{run_experiment, ExperimentConfig, ExperimentResult, Scale};
use sysid::nn::{mse, BatchState, SeqState};
use sysid::transfer::TransferKind;
use sysid::{Network64, Tensor64};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: impl Into<String>, bad: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(bad.into())
    }
}

// ---------------------------------------------------------------- 1

fn random_net_case(seed: u64) -> (Network64, Tensor64, Tensor64, Option<BatchState<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xACCE);
    let uni = |n: usize, rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let sizes: Vec<usize> = (0..rng.random_range(1..=3))
        .map(|_| rng.random_range(1..=4))
        .collect();
    let (i, o, b, t) = (
        rng.random_range(1..=4),
        rng.random_range(1..=4),
        rng.random_range(1..=3),
        rng.random_range(1..=6),
    );
    let mut net = Network64::init(i, &sizes, o, seed).unwrap();
    for p in net.tensors_mut() {
        for v in p.as_mut_slice() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let x = Tensor64::from_vec(&[b, t, i], uni(b * t * i, &mut rng)).unwrap();
    let y = Tensor64::from_vec(&[b, t, o], uni(b * t * o, &mut rng)).unwrap();
    let init = rng.random_bool(0.5).then(|| BatchState {
        seqs: (0..b)
            .map(|_| SeqState {
                h: sizes.iter().map(|&u| uni(u, &mut rng)).collect(),
                c: sizes.iter().map(|&u| uni(u, &mut rng)).collect(),
            })
            .collect(),
    });
    (net, x, y, init)
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-4;
    let cases = 24;
    let mut worst: f64 = 0.0;
    for seed in 0..cases {
        let (net, x, y, init) = random_net_case(seed);
        let loss = |n: &Network64| mse(&n.predict(&x, init.as_ref()).unwrap().0, &y).unwrap();
        let (_, cache) = net.forward(&x, init.as_ref()).unwrap();
        let grads = net.backward(&cache, &y, None).unwrap();
        for (ti, g) in grads.tensors().iter().enumerate() {
            for (k, &a) in g.as_slice().iter().enumerate() {
                let mut p = net.clone();
                p.tensors_mut()[ti].as_mut_slice()[k] += H;
                let mut m = net.clone();
                m.tensors_mut()[ti].as_mut_slice()[k] -= H;
                let n = (loss(&p) - loss(&m)) / (2.0 * H);
                worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(FLOOR));
            }
        }
    }
    check(
        worst < 1e-6,
        format!("{cases} configurations, max relative error {worst:.2e}"),
        format!("max relative error {worst:.2e} >= 1e-6"),
    )
}

// ---------------------------------------------------------------- 2

fn direct_recursion(ff: &[f64], fb: &[f64], u: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; u.len()];
    for n in 0..u.len() {
        let mut acc = 0.0;
        for (i, a) in ff.iter().enumerate() {
            if n >= i {
                acc += a * u[n - i];
            }
        }
        for (j, b) in fb.iter().enumerate() {
            if n > j {
                acc += b * y[n - j - 1];
            }
        }
        y[n] = acc;
    }
    y
}

fn simulator_oracles() -> Outcome {
    let y = simulate(&lti3_source::<f64>(), &[1.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    if (y[0] - 0.01).abs() > 1e-12 || (y[1] - 0.25).abs() > 1e-12 {
        return Err(format!("LTI3 impulse gave {:?}", &y[..2]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let u: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let filters: [(&str, IirFilter<f64>); 3] = [
        ("cheby2", cheby2_source()),
        ("cheby3 back", cheby3_back()),
        (
            "cheby3 front",
            cheby3_front().with_sign(sysid::dynsys::WH_FRONT_DEFAULT_SIGN),
        ),
    ];
    let mut worst: f64 = 0.0;
    for (name, f) in &filters {
        let got = simulate(f, &u).map_err(|e| format!("{name}: {e}"))?;
        let want = direct_recursion(f.feedforward(), f.signed_feedback(), &u);
        worst = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(worst, f64::max);
    }
    if worst > 1e-10 {
        return Err(format!("IIR deviates from the recursion by {worst:e}"));
    }
    let sat = DiodeSaturation::<f64>::default();
    let branch = |x: f64| {
        if x < 0.0 {
            10.0 / 11.0 * x
        } else if x <= 0.3 {
            x
        } else {
            0.3
        }
    };
    let mut points: Vec<f64> = (-400..=400).map(|k| k as f64 / 100.0).collect();
    points.extend([0.0, -0.0, 0.3, 0.3 + 1e-12, 0.3 - 1e-12, -1.1, 5.0]);
    if let Some(x) = points.iter().find(|&&x| sat.saturate(x) != branch(x)) {
        return Err(format!(
            "saturate({x}) = {} != {}",
            sat.saturate(*x),
            branch(*x)
        ));
    }
    Ok(format!(
        "LTI3 impulse 0.01/0.25, IIR max deviation {worst:.1e} over 1000 steps, saturate at {} points",
        points.len()
    ))
}

// ---------------------------------------------------------------- 3

fn truncated_normal() -> Outcome {
    let n = Normal::new(0.0, 1.0).unwrap();
    let (a, b) = (-1.0, 1.0);
    let z = n.cdf(b) - n.cdf(a);
    let var = 1.0 + (a * n.pdf(a) - b * n.pdf(b)) / z - ((n.pdf(a) - n.pdf(b)) / z).powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2021);
    let xs: Vec<f64> = sample_truncated_normal(&TruncatedNormalSpec::UNIT, 100_000, &mut rng)
        .map_err(|e| e.to_string())?;
    let inside = xs.iter().all(|&x| -1.0 < x && x < 1.0);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    check(
        inside && mean.abs() <= 0.02 && (v - var).abs() <= 0.01,
        format!("mean {mean:+.4}, variance {v:.4} vs {var:.4}"),
        format!("support {inside}, mean {mean}, variance {v} vs {var}"),
    )
}

// ---------------------------------------------------------------- 4

fn report(epochs: (usize, usize), thresholds: (f64, f64)) -> MetricsReport {
    MetricsReport {
        minimal_test_mse: thresholds.1 / 2.0,
        dynamic_threshold: thresholds.1,
        constant_threshold: thresholds.0,
        own_minimal_test_mse: thresholds.1 / 2.0,
        epochs_to_constant: Some(epochs.0),
        epochs_to_dynamic: Some(epochs.1),
        converged_at: None,
        epochs_run: epochs.0.max(epochs.1),
    }
}

fn metric_arithmetic() -> Outcome {
    for (min, want) in [(8.915e-4, 1.783e-3), (1.132e-3, 2.264e-3)] {
        let curve = LearningCurve::from_test_mses(&[0.3, 0.01, min, 2.0 * min]);
        let got = dynamic_threshold(&curve).map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-15 {
            return Err(format!("dynamic threshold of {min} is {got}, want {want}"));
        }
    }
    // (raw, transferred) epoch pairs and the reduction each must print.
    let cases = [
        ((19, 29), (9, 25), 52.6, 13.8),
        ((19, 29), (11, 26), 42.1, 10.3),
        ((16, 29), (11, 19), 31.3, 34.5),
    ];
    let th = (1e-2, 1.783e-3);
    let mut seen = Vec::new();
    for (raw, tr, want_c, want_d) in cases {
        let cmp = compare(&report(raw, th), &report(tr, th)).map_err(|e| e.to_string())?;
        let c = round_to(cmp.constant.reduction_pct.unwrap(), 1);
        let d = round_to(cmp.dynamic.reduction_pct.unwrap(), 1);
        if c != want_c || d != want_d {
            return Err(format!(
                "{raw:?} -> {tr:?} gave {c}/{d}, want {want_c}/{want_d}"
            ));
        }
        seen.extend([c, d]);
    }
    let cmp = compare(&report((16, 16), th), &report((9, 9), th)).map_err(|e| e.to_string())?;
    let exact = cmp.constant.reduction_pct.unwrap();
    if exact != 43.75 {
        return Err(format!("16 -> 9 gave {exact}, want 43.75"));
    }
    seen.push(exact);
    Ok(format!("thresholds 1.783e-3/2.264e-3, reductions {seen:?}"))
}

// ---------------------------------------------------------------- 5, 6

const SEEDS: [u64; 3] = [2021, 2022, 2023];

fn experiments(source: Preset, target: Preset) -> Result<Vec<ExperimentResult>, String> {
    SEEDS
        .iter()
        .map(|&s| {
            run_experiment(&ExperimentConfig::new(Scale::Desk, source, target, s))
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn scratch_lti2(runs: &[ExperimentResult]) -> Outcome {
    let m = &runs[0].baseline_metrics;
    let e = m.epochs_to_constant;
    check(
        e.is_some_and(|e| e <= 100),
        format!(
            "seed {} reached 1e-2 at epoch {}, min test MSE {:.3e}",
            SEEDS[0],
            e.unwrap_or(0),
            m.own_minimal_test_mse
        ),
        format!("epochs to 1e-2: {e:?}"),
    )
}

fn rank(e: Option<usize>) -> f64 {
    e.map_or(f64::INFINITY, |v| v as f64)
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[1]
}

fn show(e: Option<usize>) -> String {
    e.map_or("-".into(), |v| v.to_string())
}

fn transfer_speedup(label: &str, runs: &[ExperimentResult]) -> Outcome {
    let scratch: Vec<Option<usize>> = runs
        .iter()
        .map(|r| r.baseline_metrics.epochs_to_constant)
        .collect();
    let mut parts = vec![format!(
        "{label}: scratch [{}]",
        scratch
            .iter()
            .map(|&e| show(e))
            .collect::<Vec<_>>()
            .join(",")
    )];
    let mut ok = true;
    for kind in [TransferKind::FineTune, TransferKind::Freeze] {
        let tr: Vec<Option<usize>> = runs
            .iter()
            .map(|r| {
                r.arms
                    .iter()
                    .find(|a| a.kind == kind)
                    .unwrap()
                    .metrics
                    .epochs_to_constant
            })
            .collect();
        let wins = scratch
            .iter()
            .zip(&tr)
            .filter(|(s, t)| rank(**t) < rank(**s))
            .count();
        let med_s = median3([rank(scratch[0]), rank(scratch[1]), rank(scratch[2])]);
        let med_t = median3([rank(tr[0]), rank(tr[1]), rank(tr[2])]);
        ok &= med_t <= med_s && wins >= 2;
        parts.push(format!(
            "{kind:?} [{}] median {med_t} vs {med_s}, {wins}/3 faster",
            tr.iter().map(|&e| show(e)).collect::<Vec<_>>().join(",")
        ));
    }
    let line = parts.join("; ");
    check(ok, line.clone(), line)
}

// ---------------------------------------------------------------- 7, 8, 9

fn sysid(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sysid"))
        .args(args)
        .env("SYSID_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "sysid {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// Runs gen, train and a freeze transfer into `root`.
fn cli_pipeline(root: &Path, threads: &str) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let small = [
        "--groups",
        "2",
        "--group-size",
        "3",
        "--train-len",
        "120",
        "--test-len",
        "150",
        "--csv",
    ];
    let mut gen_src = vec!["gen", "--system", "cheby2", "--seed", "5"];
    let (src, tgt, tr, fz) = (p("src"), p("tgt"), p("train"), p("freeze"));
    gen_src.extend(small);
    gen_src.extend(["--out", &src]);
    sysid(&gen_src, threads)?;
    let mut gen_tgt = vec!["gen", "--system", "wh", "--seed", "4"];
    gen_tgt.extend(small);
    gen_tgt.extend(["--out", &tgt]);
    sysid(&gen_tgt, threads)?;
    let net = [
        "--lstm-sizes",
        "4,6,8",
        "--max-epochs",
        "6",
        "--bptt-window",
        "40",
        "--seed",
        "4",
    ];
    let mut train = vec!["train", "--data", &tgt, "--out", &tr];
    train.extend(net);
    sysid(&train, threads)?;
    let mut transfer = vec![
        "transfer",
        "--source-data",
        &src,
        "--target-data",
        &tgt,
        "--strategy",
        "freeze",
        "--source-epochs",
        "4",
        "--with-baseline",
        "--out",
        &fz,
    ];
    transfer.extend(net);
    sysid(&transfer, threads)
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn cli_determinism(a: &Path, b: &Path) -> Outcome {
    let fa = files(a);
    if fa != files(b) {
        return Err("runs produced different file sets".into());
    }
    let compared: Vec<_> = fa
        .iter()
        .filter(|f| {
            matches!(
                f.extension().and_then(|e| e.to_str()),
                Some("csv" | "sidm" | "sidd")
            )
        })
        .collect();
    for f in &compared {
        if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
            return Err(format!("{} differs", f.display()));
        }
    }
    let ckpts = compared
        .iter()
        .filter(|f| f.extension().unwrap() == "sidm")
        .count();
    check(
        ckpts >= 3,
        format!("{} CSV/container files byte-identical across 1- and 3-thread runs ({ckpts} checkpoints)", compared.len()),
        "no checkpoints produced",
    )
}

/// Byte ranges of each parameter tensor, read straight from the container
/// layout: magic, u16 version, u32 header length, JSON header, f64 data.
fn tensor_ranges(bytes: &[u8]) -> Vec<std::ops::Range<usize>> {
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[10..10 + hlen]).unwrap();
    let mut at = 10 + hlen;
    header["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|shape| {
            let n: usize = shape
                .as_array()
                .unwrap()
                .iter()
                .map(|d| d.as_u64().unwrap() as usize)
                .product();
            let r = at..at + 8 * n;
            at = r.end;
            r
        })
        .collect()
}

fn freeze_invariance(dir: &Path) -> Outcome {
    let pre = std::fs::read(dir.join("pretrained.sidm")).map_err(|e| e.to_string())?;
    let post = std::fs::read(dir.join("model.sidm")).map_err(|e| e.to_string())?;
    let (rp, rq) = (tensor_ranges(&pre), tensor_ranges(&post));
    // Three tensors (W, U, b) per LSTM layer.
    for (k, (a, b)) in rp.iter().zip(&rq).take(6).enumerate() {
        if pre[a.clone()] != post[b.clone()] {
            return Err(format!("LSTM{} tensor {} changed", k / 3 + 1, k % 3));
        }
    }
    let moved = rp
        .iter()
        .zip(&rq)
        .skip(6)
        .any(|(a, b)| pre[a.clone()] != post[b.clone()]);
    let bytes: usize = rp.iter().take(6).map(|r| r.len()).sum();
    check(
        moved,
        format!("LSTM1/LSTM2: {bytes} bytes identical, upper layers trained"),
        "upper layers did not change either",
    )
}

fn round_trips(root: &Path) -> Outcome {
    let mut n = 0;
    for f in files(root) {
        let path = root.join(&f);
        let bytes = std::fs::read(&path).unwrap();
        let again = match f.extension().and_then(|e| e.to_str()) {
            Some("sidd") => {
                let ds = Dataset::<f64>::load(&path).map_err(|e| e.to_string())?;
                let mut v = Vec::new();
                ds.write_to(&mut v).map_err(|e| e.to_string())?;
                v
            }
            Some("sidm") => {
                let (net, h) = Network64::load_checkpoint(&path).map_err(|e| e.to_string())?;
                net.to_checkpoint_bytes(h.seed, h.provenance)
                    .map_err(|e| e.to_string())?
            }
            _ => continue,
        };
        if again != bytes {
            return Err(format!("{} does not round-trip", f.display()));
        }
        n += 1;
    }
    check(
        n > 0,
        format!("{n} dataset/checkpoint files reload and re-serialize bit-exactly"),
        "no files",
    )
}

// ----------------------------------------------------------------

fn main() {
    let t0 = Instant::now();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient check", gradient_check()),
        ("2 simulator oracles", simulator_oracles()),
        ("3 truncated normal", truncated_normal()),
        ("4 metric arithmetic", metric_arithmetic()),
    ];

    let lti = experiments(Preset::Lti3Source, Preset::Lti2Target);
    let wh = experiments(Preset::Cheby2Source, Preset::WhBenchmark);
    results.push((
        "5 scratch lti2 converges",
        lti.as_ref()
            .map_err(Clone::clone)
            .and_then(|r| scratch_lti2(r)),
    ));
    let speed = match (&lti, &wh) {
        (Ok(l), Ok(w)) => transfer_speedup("lti3->lti2", l)
            .and_then(|a| transfer_speedup("cheby2->wh", w).map(|b| format!("{a} | {b}"))),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    results.push(("6 transfer speeds up training", speed));

    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let pipeline = cli_pipeline(&a, "1").and_then(|()| cli_pipeline(&b, "3"));
    let after = |f: &dyn Fn() -> Outcome| pipeline.clone().and_then(|()| f());
    results.push((
        "7 frozen layers unchanged",
        after(&|| freeze_invariance(&a.join("freeze"))),
    ));
    results.push((
        "8 CLI runs reproducible",
        after(&|| cli_determinism(&a, &b)),
    ));
    results.push(("9 containers round-trip", after(&|| round_trips(&a))));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(msg) => println!("PASS  criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {name}: {msg}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.1}s)",
        results.len() - failed,
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
