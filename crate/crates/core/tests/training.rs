use proptest::prelude::*;
use sysid::bench::{epochs_to_threshold, train, LearningCurve, StopReason, TrainConfig};
use sysid::data::{build_preset_dataset, DatasetBundle, DatasetSpec};
use sysid::dynsys::Preset;
use sysid::nn::{mse, TrainMask};
use sysid::tensor::Tensor;
use sysid::transfer::{run_transfer, TransferStrategy};
use sysid::{Network32, Network64, Tensor64};

const SIZES: [usize; 3] = [3, 4, 5];

fn tiny(preset: Preset, seed: u64) -> DatasetBundle<f64> {
    let spec = DatasetSpec {
        n_groups: 2,
        group_size: 3,
        train_len: 40,
        test_len: 60,
        seed,
    };
    build_preset_dataset(preset, &spec).unwrap()
}

fn cfg(max_epochs: usize, stop_tol: f64) -> TrainConfig {
    TrainConfig {
        max_epochs,
        stop_tol,
        bptt_window: 20,
        epochs_per_group: 2,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn scratch(data: &DatasetBundle<f64>, c: &TrainConfig) -> (Network64, LearningCurve) {
    let net = Network64::init(2, &SIZES, 1, c.seed).unwrap();
    train(net, &data.train, &data.test, &TrainMask::all(4), c).unwrap()
}

#[test]
fn huge_tolerance_stops_after_two_epochs() {
    let (_, curve) = scratch(&tiny(Preset::Lti2Target, 1), &cfg(50, 1e9));
    assert_eq!(curve.len(), 2);
    assert_eq!(curve.stopped_by, StopReason::Converged);
    assert_eq!(curve.converged_at(), Some(2));
}

#[test]
fn zero_tolerance_runs_to_the_cap() {
    let (_, curve) = scratch(&tiny(Preset::Lti2Target, 1), &cfg(5, 0.0));
    assert_eq!(curve.len(), 5);
    assert_eq!(curve.stopped_by, StopReason::MaxEpochs);
    let epochs: Vec<usize> = curve.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4, 5]);
}

#[test]
fn training_is_bit_reproducible() {
    let data = tiny(Preset::Lti3Source, 4);
    let c = cfg(6, 0.0);
    let (n1, c1) = scratch(&data, &c);
    let (n2, c2) = scratch(&data, &c);
    assert_eq!(c1.to_csv_string(), c2.to_csv_string());
    assert_eq!(n1, n2);
}

#[test]
fn training_reduces_test_error() {
    let (_, curve) = scratch(&tiny(Preset::Lti2Target, 2), &cfg(15, 0.0));
    let first = curve.records[0].test_mse;
    assert!(curve.min_test_mse().unwrap() < first);
}

#[test]
fn freeze_leaves_lower_layers_untouched() {
    let source = tiny(Preset::Lti3Source, 5);
    let target = tiny(Preset::Lti2Target, 6);
    let mut strategy = TransferStrategy::freeze(12);
    strategy.source_epochs = 3;
    let out = run_transfer(&source, &target, &strategy, &SIZES, &cfg(6, 0.0)).unwrap();
    for k in 0..2 {
        assert_eq!(
            out.network.lstm()[k],
            out.pretrained.lstm()[k],
            "LSTM{}",
            k + 1
        );
    }
    assert_ne!(out.network.lstm()[2], out.pretrained.lstm()[2]);
    assert_eq!(out.mask.flags(), &[false, false, true, true]);
    assert_eq!(out.report.source_curve.len(), 3);
}

#[test]
fn fine_tune_without_pretraining_equals_scratch() {
    let source = tiny(Preset::Lti3Source, 5);
    let target = tiny(Preset::Lti2Target, 6);
    let c = cfg(8, 0.0);
    let mut strategy = TransferStrategy::fine_tune();
    strategy.source_epochs = 0;
    let out = run_transfer(&source, &target, &strategy, &SIZES, &c).unwrap();
    let (net, curve) = scratch(&target, &c);
    assert_eq!(out.report.target_curve, curve);
    assert_eq!(out.network, net);
    assert!(out.report.source_curve.is_empty());
}

#[test]
fn single_precision_training_runs() {
    let spec = DatasetSpec {
        n_groups: 1,
        group_size: 2,
        train_len: 30,
        test_len: 30,
        seed: 3,
    };
    let data = build_preset_dataset::<f32>(Preset::Lti2Target, &spec).unwrap();
    let net = Network32::init(2, &[3, 3], 1, 1).unwrap();
    let (_, curve) = train(
        net,
        &data.train,
        &data.test,
        &TrainMask::all(3),
        &cfg(4, 0.0),
    )
    .unwrap();
    assert!(curve.test_mses().iter().all(|v| v.is_finite()));
}

fn permute_rows(t: &Tensor64, order: &[usize]) -> Tensor64 {
    let mut data = Vec::with_capacity(t.len());
    for &i in order {
        data.extend_from_slice(t.row(i));
    }
    Tensor::from_vec(t.shape(), data).unwrap()
}

#[test]
fn batch_permutation_is_equivariant() {
    let data = tiny(Preset::WhBenchmark, 9);
    let (x, y) = data.test.window(0, 25);
    let order = [2, 0, 1];
    let (xp, yp) = (permute_rows(&x, &order), permute_rows(&y, &order));
    let net = Network64::init(2, &SIZES, 1, 4).unwrap();

    let (p, cache) = net.forward(&x, None).unwrap();
    let (pp, cache_p) = net.forward(&xp, None).unwrap();
    assert_eq!(permute_rows(&p, &order), pp);
    let (l, lp) = (mse(&p, &y).unwrap(), mse(&pp, &yp).unwrap());
    assert!((l - lp).abs() <= 1e-12);

    let g = net.backward(&cache, &y, None).unwrap();
    let gp = net.backward(&cache_p, &yp, None).unwrap();
    for (a, b) in g.tensors().iter().zip(gp.tensors()) {
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() <= 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn epochs_to_threshold_is_monotone(
        mses in prop::collection::vec(1e-4f64..1.0, 1..40),
        t1 in 1e-4f64..1.0,
        t2 in 1e-4f64..1.0,
    ) {
        let curve = LearningCurve::from_test_mses(&mses);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let rank = |e: Option<usize>| e.unwrap_or(usize::MAX);
        prop_assert!(rank(epochs_to_threshold(&curve, hi)) <= rank(epochs_to_threshold(&curve, lo)));
        if let Some(e) = epochs_to_threshold(&curve, lo) {
            prop_assert!(mses[e - 1] <= lo);
            prop_assert!(mses[..e - 1].iter().all(|&m| m > lo));
        }
    }
}
