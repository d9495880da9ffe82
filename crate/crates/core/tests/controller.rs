use proptest::prelude::*;
use reflow_core::sampler::*;
use reflow_core::transport::FnVelocity;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Walk with increments of norm at most `delta` built from raw direction/size draws.
fn walk(start: &[f64], raw: &[(Vec<f64>, f64)], delta: f64) -> Vec<Vec<f64>> {
    let mut out = vec![start.to_vec()];
    for (dir, frac) in raw {
        let n = norm(dir);
        let prev = out.last().unwrap().clone();
        let step: Vec<f64> = if n > 0.0 {
            dir.iter().map(|d| d / n * delta * frac).collect()
        } else {
            vec![0.0; dir.len()]
        };
        out.push(prev.iter().zip(&step).map(|(a, b)| a + b).collect());
    }
    out
}

/// `s_t` along the sequence, EMA started at `v_0`.
fn deviations(seq: &[Vec<f64>], lambda: f64) -> Vec<f64> {
    let mut ema = seq[0].clone();
    let mut out = vec![0.0];
    for v in &seq[1..] {
        ema_update(&mut ema, v, lambda);
        out.push(norm(&v.iter().zip(&ema).map(|(a, b)| a - b).collect::<Vec<_>>()));
    }
    out
}

fn raw_steps() -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
    prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 3), 0.0f64..=1.0), 1..80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ema_deviation_bounded_by_increment(lambda in 0.01f64..=0.5, delta in 0.0f64..5.0,
                                          start in prop::collection::vec(-10.0f64..10.0, 3), raw in raw_steps()) {
        let seq = walk(&start, &raw, delta);
        for s in deviations(&seq, lambda) {
            prop_assert!(s <= delta + 1e-12, "s {} delta {}", s, delta);
        }
    }

    #[test]
    fn ema_deviation_weighted_increment_bound(lambda in 0.01f64..0.99, delta in 0.0f64..5.0,
                                              start in prop::collection::vec(-10.0f64..10.0, 3), raw in raw_steps()) {
        let seq = walk(&start, &raw, delta);
        let incs: Vec<f64> = seq.windows(2).map(|w| norm(&w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect::<Vec<_>>())).collect();
        for (t, s) in deviations(&seq, lambda).into_iter().enumerate().skip(1) {
            let bound: f64 = (0..t).map(|j| lambda.powi(j as i32 + 1) * incs[t - 1 - j]).sum();
            prop_assert!(s <= bound + 1e-12 * (1.0 + bound));
        }
    }

    #[test]
    fn blend_shrinks_deviation_exactly(v in prop::collection::vec(-5.0f64..5.0, 4),
                                       e in prop::collection::vec(-5.0f64..5.0, 4), eta in 0.0f64..50.0) {
        let mut out = vec![0.0; 4];
        let alpha = blend_velocity(&v, &e, eta, &mut out);
        let s = norm(&v.iter().zip(&e).map(|(a, b)| a - b).collect::<Vec<_>>());
        let after = norm(&out.iter().zip(&e).map(|(a, b)| a - b).collect::<Vec<_>>());
        prop_assert!((after - (1.0 - alpha) * s).abs() <= 1e-12 * (1.0 + s));
        prop_assert!((0.0..1.0).contains(&alpha));
    }

    #[test]
    fn step_size_monotone_and_clamped(s1 in 0.0f64..100.0, ds in 0.0f64..100.0, k1 in 0.0f64..10.0,
                                      k2 in 0.0f64..10.0, c in 0.01f64..2.0) {
        let a = step_size(s1, k1, k2, c, 0.01, 0.125);
        let b = step_size(s1 + ds, k1, k2, c, 0.01, 0.125);
        prop_assert!(b <= a);
        prop_assert!((0.01..=0.125).contains(&a));
    }

    #[test]
    fn adaptive_steps_respect_clamps_and_reach_one(amp in 0.0f64..20.0, freq in 0.0f64..30.0, lin in -2.0f64..2.0,
                                                   dmin in 0.001f64..0.05, span in 0.0f64..0.3, u0 in -3.0f64..3.0,
                                                   k1 in 0.0f64..4.0, shrink in 0.2f64..=1.0) {
        let v = FnVelocity::new(1, move |u: &[f64], t, o: &mut [f64]| o[0] = amp * (freq * t).sin() + lin * u[0]);
        let cfg = ControllerConfig {
            dtau_min: dmin,
            dtau_max: dmin + span,
            kappa1: k1,
            spike_shrink: shrink,
            ..Default::default()
        };
        let (_, tr) = integrate_adaptive(&v, &[u0], &[], &cfg, false).unwrap();
        let last = tr.steps.len() - 1;
        for (i, st) in tr.steps.iter().enumerate() {
            prop_assert!(st.dtau <= cfg.dtau_max + 1e-15);
            if i < last {
                prop_assert!(st.dtau >= cfg.dtau_min - 1e-15);
            }
        }
        prop_assert!((tr.total_dtau() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(tr.final_tau, 1.0);
        prop_assert_eq!(tr.nfe, tr.steps.len());
    }
}

#[test]
fn monotone_drift_shows_the_large_decay_regime() {
    // Constant drift: s_t → δλ/(1−λ), which exceeds δ once λ > 1/2.
    let delta = 1.0;
    let seq: Vec<Vec<f64>> = (0..400).map(|k| vec![k as f64 * delta]).collect();
    for lambda in [0.25, 0.5, 0.9] {
        let s = *deviations(&seq, lambda).last().unwrap();
        assert!((s - delta * lambda / (1.0 - lambda)).abs() < 1e-9, "lambda {lambda}: {s}");
    }
}

#[test]
fn sweep_configs_all_validate_and_run() {
    let v = FnVelocity::new(1, |u: &[f64], t, o: &mut [f64]| o[0] = 3.0 * (6.0 * t).cos() - u[0]);
    for (label, cfg) in sweep_grid(&ControllerConfig::default()) {
        cfg.validate().unwrap();
        let (u, tr) = integrate_adaptive(&v, &[0.5], &[], &cfg, false).unwrap();
        assert!(u[0].is_finite(), "{label}");
        assert!((tr.total_dtau() - 1.0).abs() < 1e-12, "{label}");
    }
}
