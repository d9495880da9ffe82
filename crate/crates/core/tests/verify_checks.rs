use proptest::prelude::*;
use reflow_core::data::{gen_power_law_ensemble, PowerLawFieldSpec};
use reflow_core::spectral::{ensemble_structure_function, tail_coverage_report};
use reflow_core::transport::{CouplingKind, FnVelocity, GaussianTransportProblem};
use reflow_core::verify::*;
use reflow_core::Rng;

#[test]
fn lte_second_order_on_nonlinear_fields() {
    let hs: Vec<f64> = (3..=9).map(|k| 0.5f64.powi(k)).collect();
    let fields: Vec<Box<dyn Fn(&[f64], f64, &mut [f64]) + Sync>> = vec![
        Box::new(|u, t, o| o[0] = u[0].sin() + t),
        Box::new(|u, t, o| o[0] = -u[0] * u[0] + (3.0 * t).cos()),
        Box::new(|u, _, o| {
            o[0] = -u[1];
            o[1] = u[0];
        }),
    ];
    for (i, f) in fields.into_iter().enumerate() {
        let dim = if i == 2 { 2 } else { 1 };
        let v = FnVelocity::new(dim, f);
        let r = lte_order_check(&v, &vec![0.3; dim], &[], 0.2, &hs).unwrap();
        let s = r.slope.unwrap();
        assert!((1.9..=2.1).contains(&s), "field {i}: slope {s}");
        let q = *r.ratios.last().unwrap();
        assert!((q - 1.0).abs() < 0.02, "field {i}: ratio {q}");
    }
}

#[test]
fn lte_rejects_bad_steps() {
    let v = FnVelocity::new(1, |_, _, o: &mut [f64]| o[0] = 0.0);
    assert!(lte_order_check(&v, &[0.0], &[], 0.9, &[0.2]).is_err());
    assert!(lte_order_check(&v, &[0.0], &[], 0.0, &[]).is_err());
    assert!(lte_order_check(&v, &[0.0], &[], 0.0, &[-0.1]).is_err());
}

#[test]
fn global_euler_first_order_and_dominated() {
    let v = FnVelocity::new(1, |u: &[f64], t, o: &mut [f64]| o[0] = -u[0] + (2.0 * t).sin() + 0.5 * u[0].cos());
    let r = global_error_check(&v, &[1.0], &[], &[16, 32, 64, 128], 2048, &mut Rng::new(3)).unwrap();
    let s = r.slope.unwrap();
    assert!((0.95..=1.05).contains(&s), "slope {s}");
    assert!(r.dominated, "{r:?}");
    assert!(r.fitted_constant <= r.constant);
    assert!(global_error_check(&v, &[1.0], &[], &[3], 64, &mut Rng::new(0)).is_err());
}

#[test]
fn lipschitz_estimate_of_linear_map() {
    let v = FnVelocity::new(2, |u: &[f64], _, o: &mut [f64]| {
        o[0] = 3.0 * u[0];
        o[1] = -0.5 * u[1];
    });
    let pts = vec![(vec![0.0, 0.0], 0.5); 4];
    let l = estimate_lipschitz(&v, &pts, &[], 1.0, 256, &mut Rng::new(1)).unwrap();
    assert!(l <= 3.0 + 1e-12 && l > 2.9, "{l}");
}

fn translation() -> GaussianTransportProblem {
    GaussianTransportProblem::scalar(-1.0, 0.7, 1.5, 0.7, CouplingKind::Comonotone).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn terminal_bound_holds_for_random_constructions(seed in 0u64..1000, delta in -1.0f64..1.0, amp in 0.0f64..1.5) {
        let p = translation();
        let mut r = Rng::new(seed);
        let xs: Vec<Vec<f64>> = (0..32).map(|_| p.sample_source(&mut r)).collect();
        let cfg = TerminalConfig { steps: 128, ..Default::default() };
        for pert in [Perturbation::Offset(vec![delta]), Perturbation::Oscillation(amp)] {
            let learned = PerturbedVelocity { base: &p, perturbation: pert };
            let rep = terminal_decomposition_check(&p, &learned, &xs, &[], &cfg, &mut Rng::new(seed + 1)).unwrap();
            prop_assert!(rep.holds, "{:?}", rep);
            let ch = chebyshev_tail_check(&rep, &[0.05, 0.1, 0.2, 0.5], 2.0);
            prop_assert!(ch.violations.is_empty());
        }
    }
}

#[test]
fn terminal_rejects_incompatible_quadrature() {
    let p = translation();
    let cfg = TerminalConfig { steps: 100, ..Default::default() };
    assert!(terminal_decomposition_check(&p, &p, &[vec![0.0]], &[], &cfg, &mut Rng::new(0)).is_err());
    assert!(terminal_decomposition_check(&p, &p, &[], &[], &TerminalConfig::default(), &mut Rng::new(0)).is_err());
}

#[test]
fn one_step_bound_on_noisy_projection() {
    let spec = PowerLawFieldSpec::new_1d(64, 2.0, 1.0, 32.0, 4);
    let truth = gen_power_law_ensemble(&spec, 48).unwrap();
    let dx = std::f64::consts::TAU / 64.0;
    let radii: Vec<f64> = (1..=16).map(|i| i as f64 * dx).collect();
    let mut sf = ensemble_structure_function(&truth, &radii).unwrap();
    sf.fit(2.0 * dx, 8.0 * dx).unwrap();
    let cov = tail_coverage_report(&truth, &[4, 8, 16], sf.modulus().unwrap(), 1.0, 32, &mut Rng::new(5)).unwrap();
    for (k, sigma) in [(4, 0.0), (8, 0.1), (16, 0.3)] {
        let sur = noisy_projection(&truth, k, sigma, &mut Rng::new(k as u64)).unwrap();
        let rep = one_step_capacity_check(&truth, &sur, k, &cov, 64, &mut Rng::new(6)).unwrap();
        assert!(rep.holds, "{rep:?}");
        assert!(rep.law_error_sliced <= rep.coupling_bound + 1e-12);
        assert!(rep.coupling_bound <= rep.bound + 1e-12);
        if sigma == 0.0 {
            assert!(rep.eps_train < 1e-12);
        }
    }
    let exact = project_ensemble(&truth, 8).unwrap();
    let rep = one_step_capacity_check(&truth, &exact, 8, &cov, 64, &mut Rng::new(6)).unwrap();
    assert!((rep.coupling_bound - rep.tail_energy.sqrt()).abs() < 1e-12);
}

#[test]
fn toy_master_pipeline_is_finite_and_dominated() {
    let cfg = ToyPipelineConfig {
        samples: 128,
        directions: 64,
        ..Default::default()
    };
    let a = toy_master_pipeline(&cfg).unwrap();
    assert!(a.all_finite);
    assert!(a.fitted_constant <= 1.0, "{a:?}");
    let b = toy_master_pipeline(&ToyPipelineConfig { steps: 2 * cfg.steps, ..cfg }).unwrap();
    assert!((a.discretization / b.discretization - 2.0).abs() < 0.1);
    let json = serde_json::to_string(&VerificationReport::new("master", a.all_finite, &[("constant", 1.0)], &a)).unwrap();
    assert!(json.contains("fitted_constant"));
}

#[test]
fn straight_problem_has_no_discretization_term() {
    let p = translation();
    let starts: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.3 - 1.0]).collect();
    let c = mean_curvature_integral(&p, &starts, &[], 64).unwrap();
    let rep = master_inequality_report(MasterTerms {
        coverage: 0.0,
        fit: 0.0,
        straightness: 0.0,
        lipschitz: 0.0,
        curvature_integral: c,
        steps: 8,
        w2_estimate: 0.0,
    });
    assert!(rep.discretization < 1e-6, "{}", rep.discretization);
}

#[test]
fn one_step_with_burgers_map() {
    use reflow_core::data::{burgers_step, BurgersSpec};
    let spec = BurgersSpec {
        n: 64,
        substeps: 200,
        t_final: 0.2,
        ..Default::default()
    };
    let grid = spec.grid().unwrap();
    let mut rng = Rng::new(8);
    let inputs: Vec<_> = (0..24).map(|_| spec.sample_initial(&mut rng).unwrap()).collect();
    let outs: Vec<_> = inputs.iter().map(|u| burgers_step(u, &spec).unwrap()).collect();
    let truth = reflow_core::Ensemble::new(outs).unwrap();
    assert_eq!(truth.grid().points(), grid.points());
    let dx = std::f64::consts::TAU / 64.0;
    let radii: Vec<f64> = (1..=16).map(|i| i as f64 * dx).collect();
    let mut sf = ensemble_structure_function(&truth, &radii).unwrap();
    sf.fit(dx, 8.0 * dx).unwrap();
    let cov = tail_coverage_report(&truth, &[4, 8, 32], sf.modulus().unwrap(), 1.0, 32, &mut Rng::new(1)).unwrap();
    let perfect = project_ensemble(&truth, 8).unwrap();
    let rep = one_step_capacity_check(&truth, &perfect, 8, &cov, 64, &mut Rng::new(2)).unwrap();
    assert!(rep.eps_train < 1e-12);
    assert!(rep.law_error_sliced <= rep.coverage_term.sqrt() * (1.0 + 1e-9));
    let full = one_step_capacity_check(&truth, &project_ensemble(&truth, 32).unwrap(), 32, &cov, 64, &mut Rng::new(2)).unwrap();
    assert!(full.tail_energy < 1e-20 && full.coupling_bound < 1e-10);
    assert!(full.coverage_term < cov.coverage_term(4));
    let untrained = noisy_projection(&truth, 8, 1.0, &mut Rng::new(3)).unwrap();
    assert!(one_step_capacity_check(&truth, &untrained, 8, &cov, 64, &mut Rng::new(2)).unwrap().holds);
}
