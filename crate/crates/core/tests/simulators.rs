use proptest::prelude::*;
use sysid::dynsys::{
    cheby2_source, cheby3_back, cheby3_front, lti2_target, lti3_source, simulate, wh_benchmark,
    DiodeSaturation, FeedbackSign, IirFilter, LtiSystem, Matrix, Preset, SisoSystem,
};

fn inputs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..max_len)
}

/// Controllable canonical form of `y_n = sum a_i u_{n-i} + sum s_j y_{n-j}`.
fn canonical_lti(f: &IirFilter<f64>) -> LtiSystem<f64> {
    let a = f.feedforward();
    let s = f.signed_feedback();
    let k = s.len();
    let mut rows_a = vec![vec![0.0; k]; k];
    rows_a[0].copy_from_slice(s);
    for i in 1..k {
        rows_a[i][i - 1] = 1.0;
    }
    let mut b = vec![vec![0.0]; k];
    b[0][0] = 1.0;
    let c: Vec<f64> = (0..k).map(|j| a[j + 1] + a[0] * s[j]).collect();
    let rows = |m: &[Vec<f64>]| {
        Matrix::from_rows(&m.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap()
    };
    LtiSystem::new(
        rows(&rows_a),
        rows(&b),
        Matrix::from_rows(&[&c]).unwrap(),
        Matrix::from_rows(&[&[a[0]]]).unwrap(),
    )
    .unwrap()
}

fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lti_is_linear(u in inputs(300), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..1000) {
        let v: Vec<f64> = u.iter().enumerate().map(|(i, x)| ((i as f64 + seed as f64) * 0.37).sin() * x).collect();
        for sys in [lti3_source::<f64>(), lti2_target()] {
            let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = simulate(&sys, &mix).unwrap();
            let yu = simulate(&sys, &u).unwrap();
            let yv = simulate(&sys, &v).unwrap();
            let rhs: Vec<f64> = yu.iter().zip(&yv).map(|(a, b)| alpha * a + beta * b).collect();
            prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-12);
        }
    }

    #[test]
    fn lti_is_time_invariant(u in inputs(200), k in 0usize..20) {
        for sys in [lti3_source::<f64>(), lti2_target()] {
            let mut delayed = vec![0.0; k];
            delayed.extend_from_slice(&u);
            let y = simulate(&sys, &u).unwrap();
            let yd = simulate(&sys, &delayed).unwrap();
            prop_assert!(yd[..k].iter().all(|&v| v == 0.0));
            prop_assert_eq!(&yd[k..], &y[..]);
        }
    }

    #[test]
    fn iir_matches_canonical_state_space(
        u in inputs(1000),
        ff in prop::collection::vec(-1.0f64..1.0, 2..6),
        raw_fb in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let k = ff.len() - 1;
        // Sum of |b| below one keeps the recursion stable.
        let norm: f64 = raw_fb[..k].iter().map(|b| b.abs()).sum::<f64>() + 1.0;
        let fb: Vec<f64> = raw_fb[..k].iter().map(|b| 0.95 * b / norm).collect();
        let filter = IirFilter::<f64>::new(&ff, &fb).unwrap();
        let y = simulate(&filter, &u).unwrap();
        let oracle = simulate(&canonical_lti(&filter), &u).unwrap();
        prop_assert!(max_abs_diff(&y, &oracle) <= 1e-10);
    }

    #[test]
    fn preset_filters_match_canonical_state_space(u in inputs(1000)) {
        let filters = [
            cheby2_source::<f64>(),
            cheby3_back(),
            cheby3_front().with_sign(FeedbackSign::Alternating),
            cheby3_front().with_sign(FeedbackSign::Subtractive),
        ];
        for f in filters {
            let y = simulate(&f, &u).unwrap();
            let oracle = simulate(&canonical_lti(&f), &u).unwrap();
            prop_assert!(max_abs_diff(&y, &oracle) <= 1e-10);
        }
    }

    #[test]
    fn saturation_matches_branches(x in -5.0f64..5.0) {
        let f = DiodeSaturation::<f64>::default();
        let expected = if x < 0.0 { 10.0 / 11.0 * x } else if x <= 0.3 { x } else { 0.3 };
        prop_assert_eq!(f.saturate(x), expected);
        prop_assert!(f.saturate(x) <= 0.3);
        prop_assert!(f.saturate(x + 1e-3) >= f.saturate(x));
    }

    #[test]
    fn wh_step_is_front_then_diode_then_back(u in inputs(400)) {
        let wh = wh_benchmark::<f64>(FeedbackSign::Alternating);
        let y = simulate(&wh, &u).unwrap();
        let front = simulate(&wh.front, &u).unwrap();
        let mid: Vec<f64> = front.iter().map(|&v| wh.nonlin.saturate(v)).collect();
        let back = simulate(&wh.back, &mid).unwrap();
        prop_assert_eq!(y, back);
    }
}

#[test]
fn saturation_is_continuous_at_both_breakpoints() {
    let f = DiodeSaturation::<f64>::default();
    let eps = 1e-9;
    for knee in [0.0, 0.3] {
        assert!((f.saturate(knee - eps) - f.saturate(knee + eps)).abs() <= 2e-9);
    }
}

#[test]
fn simulate_is_bit_deterministic_for_every_preset() {
    let u: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.013).sin() * 0.9).collect();
    for p in Preset::ALL {
        let sys = p.build::<f64>();
        let mut s1 = sys.zero_state();
        let a: Vec<f64> = u.iter().map(|&x| sys.step(&mut s1, x)).collect();
        let b = sysid::dynsys::simulate_system(&sys, &u).unwrap();
        assert_eq!(a, b, "{p}");
    }
}
