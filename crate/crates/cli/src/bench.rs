//! Fixed-integrator and controller-sweep tables. Every method integrates the same velocity
//! from the same initial states; Rel-L² is measured against an RK4 reference solution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use reflow_core::data::{bimodal_1d, LinearGaussianSpec, PowerLawFieldSpec};
use reflow_core::metrics::Stat;
use reflow_core::sampler::{integrate, integrate_fixed, sweep_grid, ControllerConfig, IntegratorSpec, Scheme};
use reflow_core::transport::{CouplingKind, GaussianTransportProblem, MixtureVelocity, VelocityField, VelocityModel};
use reflow_core::{Result, Rng};

use crate::config::Benchmark;

/// One table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub avg_nfe: f64,
    pub rel_l2: Stat,
    pub cost_times_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// First column header: `Method` or `Config`.
    pub key: String,
    pub rows: Vec<TableRow>,
}

pub const COLUMNS: [&str; 3] = ["Avg. NFE", "Rel. L2 Error (mean ± std)", "Cost×Err"];

impl Table {
    pub fn header(&self) -> Vec<String> {
        std::iter::once(self.key.clone())
            .chain(COLUMNS.iter().map(|s| s.to_string()))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.1},{:.4} ± {:.4},{:.2}\n",
                r.label, r.avg_nfe, r.rel_l2.mean, r.rel_l2.std, r.cost_times_err
            ));
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let h = self.header();
        let mut s = format!("| {} |\n|{}\n", h.join(" | "), "---|".repeat(h.len()));
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:.1} | {:.4} ± {:.4} | {:.2} |\n",
                r.label, r.avg_nfe, r.rel_l2.mean, r.rel_l2.std, r.cost_times_err
            ));
        }
        s
    }
}

/// A velocity plus the initial states and conditions it is integrated from.
pub struct Problem {
    pub velocity: Box<dyn VelocityField + Send>,
    pub starts: Vec<(Vec<f64>, Vec<f64>)>,
    pub norm_weight: f64,
}

fn draw_starts(dim: usize, cond: impl Fn(&mut Rng) -> Vec<f64>, sigma0: f64, n: usize, rng: &Rng) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..n)
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let u: Vec<f64> = r.normal_vec(dim).into_iter().map(|x| sigma0 * x).collect();
            (u, cond(&mut r))
        })
        .collect()
}

/// Circulant power-law covariance on an `n`-point torus (unitary DFT convention).
pub fn field_covariance(n: usize) -> Result<Vec<f64>> {
    let power = PowerLawFieldSpec::new_1d(n, 2.0, 1.0, (n / 2) as f64, 0).expected_power()?;
    let mut row = vec![0.0; n];
    for (lag, r) in row.iter_mut().enumerate() {
        *r = power
            .iter()
            .enumerate()
            .map(|(k, p)| p.max(1e-3) * (std::f64::consts::TAU * (k * lag) as f64 / n as f64).cos())
            .sum::<f64>()
            / n as f64;
    }
    Ok((0..n * n).map(|ij| row[(ij / n + n - ij % n) % n]).collect())
}

pub fn build_problem(benchmark: Benchmark, model: Option<VelocityModel>, samples: usize, rng: &Rng) -> Result<Problem> {
    let (velocity, dim, cond_dim): (Box<dyn VelocityField + Send>, usize, usize) = match benchmark {
        Benchmark::Mixture => (Box::new(MixtureVelocity::new(bimodal_1d(), 1.0)?), 1, 0),
        Benchmark::Gaussian => (
            Box::new(GaussianTransportProblem::scalar(0.0, 1.0, 2.0, 0.5, CouplingKind::Comonotone)?),
            1,
            0,
        ),
        Benchmark::LinearGaussian => (Box::new(LinearGaussianSpec::toy().velocity()?), 2, 1),
        Benchmark::Field => {
            let n = 16;
            let eye: Vec<f64> = (0..n * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
            let p = GaussianTransportProblem::new(vec![0.0; n], &eye, vec![0.0; n], &field_covariance(n)?, CouplingKind::Independent)?;
            (Box::new(p), n, 0)
        }
    };
    let velocity: Box<dyn VelocityField + Send> = match model {
        Some(m) => {
            if m.state_dim() != dim || m.cond_dim() != cond_dim {
                return Err(reflow_core::ReflowError::ShapeMismatch {
                    expected: dim,
                    found: m.state_dim(),
                });
            }
            Box::new(m)
        }
        None => velocity,
    };
    let norm_weight = if benchmark == Benchmark::Field { std::f64::consts::TAU / 16.0 } else { 1.0 };
    let lg = LinearGaussianSpec::toy();
    let starts = draw_starts(
        dim,
        |r| if cond_dim > 0 { lg.sample_condition(r) } else { Vec::new() },
        1.0,
        samples,
        rng,
    );
    Ok(Problem {
        velocity,
        starts,
        norm_weight,
    })
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Scores each labelled integrator on `problem`.
pub fn run_table(key: &str, problem: &Problem, methods: &[(String, IntegratorSpec)], reference_steps: usize) -> Result<Table> {
    let v: &dyn VelocityField = problem.velocity.as_ref();
    let refs = problem
        .starts
        .par_iter()
        .map(|(u, c)| integrate_fixed(v, u, c, Scheme::Rk4, reference_steps, false).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(methods.len());
    for (label, spec) in methods {
        let spec = match spec {
            IntegratorSpec::Adaptive(c) => IntegratorSpec::Adaptive(ControllerConfig {
                norm_weight: problem.norm_weight,
                ..c.clone()
            }),
            s => s.clone(),
        };
        let out = problem
            .starts
            .par_iter()
            .zip(&refs)
            .map(|((u, c), r)| integrate(v, u, c, &spec, false).map(|(x, t)| (rel(&x, r), t.nfe)))
            .collect::<Result<Vec<_>>>()?;
        let errs: Vec<f64> = out.iter().map(|o| o.0).collect();
        let avg_nfe = out.iter().map(|o| o.1 as f64).sum::<f64>() / out.len() as f64;
        let rel_l2 = Stat::of(&errs);
        rows.push(TableRow {
            label: label.clone(),
            avg_nfe,
            cost_times_err: avg_nfe * rel_l2.mean,
            rel_l2,
        });
    }
    Ok(Table { key: key.into(), rows })
}

/// `euler-16`, `rk2-16`, `rk4-16`, `midpoint-32` (16 midpoint steps) and the controller.
pub fn integrator_methods(controller: &ControllerConfig) -> Vec<(String, IntegratorSpec)> {
    vec![
        ("euler-16".into(), IntegratorSpec::fixed(Scheme::Euler, 16)),
        ("rk2-16".into(), IntegratorSpec::fixed(Scheme::Rk2, 16)),
        ("rk4-16".into(), IntegratorSpec::fixed(Scheme::Rk4, 16)),
        ("midpoint-32".into(), IntegratorSpec::fixed(Scheme::Midpoint, 16)),
        ("adaptive".into(), IntegratorSpec::Adaptive(controller.clone())),
    ]
}

pub fn sweep_methods(controller: &ControllerConfig) -> Vec<(String, IntegratorSpec)> {
    sweep_grid(controller)
        .into_iter()
        .map(|(l, c)| (l, IntegratorSpec::Adaptive(c)))
        .collect()
}

pub fn bench_integrators(problem: &Problem, controller: &ControllerConfig, reference_steps: usize) -> Result<Table> {
    run_table("Method", problem, &integrator_methods(controller), reference_steps)
}

pub fn sweep_controller(problem: &Problem, controller: &ControllerConfig, reference_steps: usize) -> Result<Table> {
    run_table("Config", problem, &sweep_methods(controller), reference_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nfe_accounting_and_columns() {
        let p = build_problem(Benchmark::Mixture, None, 16, &Rng::new(0)).unwrap();
        let t = bench_integrators(&p, &ControllerConfig::default(), 256).unwrap();
        let nfe: Vec<f64> = t.rows.iter().map(|r| r.avg_nfe).collect();
        assert_eq!(&nfe[..4], &[16.0, 32.0, 64.0, 32.0]);
        assert!(nfe[4] >= 8.0);
        for r in &t.rows {
            assert!((r.cost_times_err - r.avg_nfe * r.rel_l2.mean).abs() < 1e-12);
        }
        let csv = t.to_csv();
        assert!(csv.starts_with("Method,Avg. NFE,Rel. L2 Error (mean ± std),Cost×Err\n"));
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 4));
    }

    #[test]
    fn sweep_has_twenty_rows() {
        let p = build_problem(Benchmark::LinearGaussian, None, 8, &Rng::new(1)).unwrap();
        let t = sweep_controller(&p, &ControllerConfig::default(), 128).unwrap();
        assert_eq!(t.rows.len(), 20);
        assert_eq!(t.rows[0].label, "baseline");
        assert!(t.to_markdown().starts_with("| Config | Avg. NFE |"));
    }

    #[test]
    fn field_covariance_is_symmetric_circulant() {
        let c = field_covariance(16).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert!((c[i * 16 + j] - c[j * 16 + i]).abs() < 1e-14);
                assert!((c[i * 16 + j] - c[((i + 1) % 16) * 16 + (j + 1) % 16]).abs() < 1e-14);
            }
        }
    }
}
