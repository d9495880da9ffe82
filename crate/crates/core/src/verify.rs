//! Executable checks of the error theory at desk scale: Euler local and global error
//! orders, the fit/straightness terminal decomposition and its Chebyshev tail, the
//! one-step capacity/coverage/fit bound, and the master inequality.
//!
//! Every check returns a typed report; [`VerificationReport`] wraps one with its
//! declared tolerances and pass flag for JSON output.

use std::f64::consts::TAU;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ReflowError};
use crate::field::{Ensemble, Field, Grid};
use crate::metrics::sliced_w2;
use crate::rng::Rng;
use crate::sampler::{integrate_fixed, Scheme};
use crate::spectral::{dft, ensemble_structure_function, idft, project_bandlimited, tail_coverage_report, Band, CoverageReport};
use crate::transport::{CouplingKind, GaussianTransportProblem, VelocityField};

/// A named check with the tolerances that decided it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub passed: bool,
    pub tolerances: Vec<(String, f64)>,
    pub details: serde_json::Value,
}

impl VerificationReport {
    pub fn new<T: Serialize>(name: &str, passed: bool, tolerances: &[(&str, f64)], details: &T) -> Self {
        Self {
            name: name.into(),
            passed,
            tolerances: tolerances.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            details: serde_json::to_value(details).unwrap_or(serde_json::Value::Null),
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn eval(v: &dyn VelocityField, u: &[f64], cond: &[f64], tau: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; u.len()];
    v.eval(u, cond, tau, &mut out)?;
    Ok(out)
}

/// Classical RK4 from `t0` to `t1` with `substeps` uniform substeps.
pub fn rk4_segment(v: &dyn VelocityField, u: &[f64], cond: &[f64], t0: f64, t1: f64, substeps: usize) -> Result<Vec<f64>> {
    let n = u.len();
    let h = (t1 - t0) / substeps as f64;
    let mut x = u.to_vec();
    let mut tmp = vec![0.0; n];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..substeps {
        let t = t0 + i as f64 * h;
        v.eval(&x, cond, t, &mut k1)?;
        (0..n).for_each(|j| tmp[j] = x[j] + 0.5 * h * k1[j]);
        v.eval(&tmp, cond, t + 0.5 * h, &mut k2)?;
        (0..n).for_each(|j| tmp[j] = x[j] + 0.5 * h * k2[j]);
        v.eval(&tmp, cond, t + 0.5 * h, &mut k3)?;
        (0..n).for_each(|j| tmp[j] = x[j] + h * k3[j]);
        v.eval(&tmp, cond, t + h, &mut k4)?;
        (0..n).for_each(|j| x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
        if x.iter().any(|y| !y.is_finite()) {
            return Err(ReflowError::BlowUp { tau: t + h });
        }
    }
    Ok(x)
}

/// Finite-difference `(∂τ v, J_u v · v)` at `(u, τ)`.
pub fn material_terms(v: &dyn VelocityField, u: &[f64], cond: &[f64], tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let ht = 1e-5;
    let (ta, tb) = ((tau - ht).max(0.0), (tau + ht).min(1.0));
    let va = eval(v, u, cond, ta)?;
    let vb = eval(v, u, cond, tb)?;
    let dt: Vec<f64> = va.iter().zip(&vb).map(|(a, b)| (b - a) / (tb - ta)).collect();
    let v0 = eval(v, u, cond, tau)?;
    let vn = norm(&v0);
    if vn == 0.0 {
        return Ok((dt, vec![0.0; u.len()]));
    }
    let eps = 1e-5 * (1.0 + norm(u)) / vn;
    let up: Vec<f64> = u.iter().zip(&v0).map(|(x, w)| x + eps * w).collect();
    let um: Vec<f64> = u.iter().zip(&v0).map(|(x, w)| x - eps * w).collect();
    let jp = eval(v, &up, cond, tau)?;
    let jm = eval(v, &um, cond, tau)?;
    let jv = jp.iter().zip(&jm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    Ok((dt, jv))
}

/// Largest `‖v(x,τ) − v(y,τ)‖ / ‖x − y‖` over random pairs `y = x + r·dir` around the given
/// `(x, τ)` points, `r` uniform in `(0, radius]`.
pub fn estimate_lipschitz(
    v: &dyn VelocityField,
    points: &[(Vec<f64>, f64)],
    cond: &[f64],
    radius: f64,
    pairs_per_point: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut best = 0.0f64;
    for (x, tau) in points {
        let vx = eval(v, x, cond, *tau)?;
        for _ in 0..pairs_per_point {
            let dir = rng.unit_vector(x.len());
            let r = radius * (1.0 - rng.uniform());
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
            let vy = eval(v, &y, cond, *tau)?;
            best = best.max(diff_norm(&vx, &vy) / r);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LteReport {
    pub tau0: f64,
    pub dtaus: Vec<f64>,
    /// `‖Euler step − fine RK4‖` per step size.
    pub lte: Vec<f64>,
    /// Leading term `(Δτ²/2)‖∂τv + J_u v·v‖`.
    pub predicted: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Log–log slope of `lte` against `Δτ`; `None` when every error is at rounding level.
    pub slope: Option<f64>,
}

/// One explicit Euler step from `(u0, τ0)` against RK4 with `Δτ/100` substeps.
pub fn lte_order_check(v: &dyn VelocityField, u0: &[f64], cond: &[f64], tau0: f64, dtaus: &[f64]) -> Result<LteReport> {
    if dtaus.is_empty() || dtaus.iter().any(|&h| !(h > 0.0) || tau0 + h > 1.0 + 1e-12) {
        return Err(invalid("step sizes must be positive and stay inside [0, 1]"));
    }
    let v0 = eval(v, u0, cond, tau0)?;
    let (dt, jv) = material_terms(v, u0, cond, tau0)?;
    let accel = norm(&dt.iter().zip(&jv).map(|(a, b)| a + b).collect::<Vec<_>>());
    let mut lte = Vec::with_capacity(dtaus.len());
    let mut predicted = Vec::with_capacity(dtaus.len());
    for &h in dtaus {
        let reference = rk4_segment(v, u0, cond, tau0, tau0 + h, 100)?;
        let euler: Vec<f64> = u0.iter().zip(&v0).map(|(x, w)| x + h * w).collect();
        lte.push(diff_norm(&euler, &reference));
        predicted.push(0.5 * h * h * accel);
    }
    let ratios = lte
        .iter()
        .zip(&predicted)
        .map(|(a, b)| if *b > 0.0 { a / b } else { f64::NAN })
        .collect();
    let slope = if dtaus.len() < 2 || lte.iter().all(|&e| e <= 1e-12 * (1.0 + norm(u0))) {
        None
    } else {
        Some(crate::spectral::fit_power_law(dtaus, &lte)?.1)
    };
    Ok(LteReport {
        tau0,
        dtaus: dtaus.to_vec(),
        lte,
        predicted,
        ratios,
        slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalErrorReport {
    pub steps: Vec<usize>,
    /// `sup_k ‖u_N(τ_k) − u(τ_k)‖` over the Euler grid.
    pub errors: Vec<f64>,
    /// Log–log slope of error against `1/N`; `None` when every error is at rounding level.
    pub slope: Option<f64>,
    /// `∫₀¹ (‖∂τv‖ + ‖J_u v·v‖) dτ` along the reference path.
    pub curvature_integral: f64,
    pub lipschitz: f64,
    /// `e^{L}/2`, the Grönwall constant of the Euler bound.
    pub constant: f64,
    /// `constant · Δτ · curvature_integral` per N.
    pub bounds: Vec<f64>,
    /// Smallest constant that would still dominate every measured error.
    pub fitted_constant: f64,
    pub dominated: bool,
}

/// Euler at each `N` against RK4 with `reference_steps` steps (every `N` must divide it).
pub fn global_error_check(
    v: &dyn VelocityField,
    u0: &[f64],
    cond: &[f64],
    steps: &[usize],
    reference_steps: usize,
    rng: &mut Rng,
) -> Result<GlobalErrorReport> {
    if steps.is_empty() || steps.iter().any(|&n| n == 0 || reference_steps % n != 0) {
        return Err(invalid("every N must be positive and divide the reference step count"));
    }
    let (_, tr) = integrate_fixed(v, u0, cond, Scheme::Rk4, reference_steps, true)?;
    let path = tr.states.expect("recorded");
    let h = 1.0 / reference_steps as f64;
    let mut integrand = Vec::with_capacity(path.len());
    for (i, x) in path.iter().enumerate() {
        let (dt, jv) = material_terms(v, x, cond, i as f64 * h)?;
        integrand.push(norm(&dt) + norm(&jv));
    }
    let curvature_integral = h * (integrand.iter().sum::<f64>() - 0.5 * (integrand[0] + integrand[integrand.len() - 1]));
    let stride = (reference_steps / 64).max(1);
    let probe: Vec<(Vec<f64>, f64)> = path
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, x)| (x.clone(), i as f64 * h))
        .collect();
    let scale = path.iter().map(|x| norm(x)).fold(0.0, f64::max);
    let lipschitz = estimate_lipschitz(v, &probe, cond, 1e-3 * (1.0 + scale), 8, rng)?;
    let constant = 0.5 * lipschitz.exp();
    let mut errors = Vec::with_capacity(steps.len());
    let mut bounds = Vec::with_capacity(steps.len());
    for &n in steps {
        let (_, e) = integrate_fixed(v, u0, cond, Scheme::Euler, n, true)?;
        let states = e.states.expect("recorded");
        let ratio = reference_steps / n;
        let err = states
            .iter()
            .enumerate()
            .map(|(k, x)| diff_norm(x, &path[k * ratio]))
            .fold(0.0, f64::max);
        errors.push(err);
        bounds.push(constant * curvature_integral / n as f64);
    }
    let inv: Vec<f64> = steps.iter().map(|&n| 1.0 / n as f64).collect();
    let slope = if steps.len() < 2 || errors.iter().all(|&e| e <= 1e-12 * (1.0 + scale)) {
        None
    } else {
        Some(crate::spectral::fit_power_law(&inv, &errors)?.1)
    };
    let fitted_constant = errors
        .iter()
        .zip(&inv)
        .map(|(e, h)| if curvature_integral > 0.0 { e / (h * curvature_integral) } else { 0.0 })
        .fold(0.0, f64::max);
    let dominated = errors.iter().zip(&bounds).all(|(e, b)| *e <= b * (1.0 + 1e-9) + 1e-14);
    Ok(GlobalErrorReport {
        steps: steps.to_vec(),
        errors,
        slope,
        curvature_integral,
        lipschitz,
        constant,
        bounds,
        fitted_constant,
        dominated,
    })
}

/// Velocity perturbations that isolate one term of the terminal decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    None,
    /// Constant additive offset: pure fit error.
    Offset(Vec<f64>),
    /// `a cos(2πτ) tanh(u_i)` per coordinate: zero time average, pure straightness error.
    Oscillation(f64),
}

/// `v_θ = v_base + perturbation`.
pub struct PerturbedVelocity<'a> {
    pub base: &'a dyn VelocityField,
    pub perturbation: Perturbation,
}

impl VelocityField for PerturbedVelocity<'_> {
    fn state_dim(&self) -> usize {
        self.base.state_dim()
    }

    fn cond_dim(&self) -> usize {
        self.base.cond_dim()
    }

    fn eval(&self, u: &[f64], cond: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.base.eval(u, cond, tau, out)?;
        match &self.perturbation {
            Perturbation::None => {}
            Perturbation::Offset(d) => out.iter_mut().zip(d).for_each(|(o, x)| *o += x),
            Perturbation::Oscillation(a) => {
                let c = a * (TAU * tau).cos();
                out.iter_mut().zip(u).for_each(|(o, x)| *o += c * x.tanh());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalConfig {
    /// Midpoint nodes for the τ integrals and the time average.
    pub quad_nodes: usize,
    /// RK4 steps for both flows.
    pub steps: usize,
    /// Relative rounding slack when comparing with the bound.
    pub slack: f64,
    /// Lipschitz constant to use; measured along the ideal paths when `None`.
    pub lipschitz: Option<f64>,
}

impl Default for TerminalConfig {
    fn default() -> Self {
        Self {
            quad_nodes: 64,
            steps: 256,
            slack: 1e-9,
            lipschitz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalReport {
    /// `(∫ E‖v̄_θ(U_τ) − v⋆(U_τ,τ)‖² dτ)^{1/2}`.
    pub eps_fit: f64,
    /// `(∫ E‖v_θ(U_τ,τ) − v̄_θ(U_τ)‖² dτ)^{1/2}`.
    pub eps_curv: f64,
    /// `(∫ E‖v_θ(U_τ,τ) − v⋆(U_τ,τ)‖² dτ)^{1/2}`.
    pub eps_dev: f64,
    /// Largest `|Σ_j (v_θ(x,τ_j) − v̄_θ(x))|` seen; zero up to rounding by construction.
    pub time_average_residual: f64,
    /// `E‖û₁ − u₁‖`.
    pub terminal_error: f64,
    /// `E‖û₁ − u₁‖²`.
    pub terminal_sq: f64,
    pub lipschitz: f64,
    /// `e^{L}(ε_fit + ε_curv)`.
    pub bound: f64,
    pub holds: bool,
    /// Per-sample `‖û₁ − u₁‖`.
    pub errors: Vec<f64>,
}

/// Monte Carlo estimates of the fit and straightness terms and the terminal error for
/// `learned` against the flow of `ideal`, both started from `samples`.
pub fn terminal_decomposition_check(
    ideal: &dyn VelocityField,
    learned: &dyn VelocityField,
    samples: &[Vec<f64>],
    cond: &[f64],
    cfg: &TerminalConfig,
    rng: &mut Rng,
) -> Result<TerminalReport> {
    if samples.is_empty() {
        return Err(ReflowError::EmptyInput("terminal decomposition samples"));
    }
    let q = cfg.quad_nodes;
    if q == 0 || cfg.steps == 0 || cfg.steps % (2 * q) != 0 {
        return Err(invalid("RK4 steps must be a positive multiple of twice the quadrature nodes"));
    }
    let nodes: Vec<f64> = (0..q).map(|j| (j as f64 + 0.5) / q as f64).collect();
    let stride = cfg.steps / q;
    struct PerSample {
        fit: f64,
        curv: f64,
        dev: f64,
        resid: f64,
        err: f64,
        probes: Vec<(Vec<f64>, f64)>,
    }
    let per: Vec<PerSample> = samples
        .par_iter()
        .map(|u0| -> Result<PerSample> {
            let (u1, tr) = integrate_fixed(ideal, u0, cond, Scheme::Rk4, cfg.steps, true)?;
            let path = tr.states.expect("recorded");
            let (uh, _) = integrate_fixed(learned, u0, cond, Scheme::Rk4, cfg.steps, false)?;
            let (mut fit, mut curv, mut dev, mut resid) = (0.0, 0.0, 0.0, 0.0f64);
            let mut probes = Vec::with_capacity(4);
            let d = u0.len();
            // vals[k*d..(k+1)*d] = v_θ(x, τ_k)
            let mut vals = vec![0.0; q * d];
            let (mut bar, mut sum_dev) = (vec![0.0; d], vec![0.0; d]);
            for (j, &t) in nodes.iter().enumerate() {
                let x = &path[j * stride + stride / 2];
                let vs = eval(ideal, x, cond, t)?;
                for (k, &s) in nodes.iter().enumerate() {
                    learned.eval(x, cond, s, &mut vals[k * d..(k + 1) * d])?;
                }
                bar.fill(0.0);
                vals.chunks(d).for_each(|w| bar.iter_mut().zip(w).for_each(|(b, y)| *b += y / q as f64));
                sum_dev.fill(0.0);
                vals.chunks(d).for_each(|w| sum_dev.iter_mut().zip(w.iter().zip(&bar)).for_each(|(s, (y, b))| *s += y - b));
                resid = resid.max(norm(&sum_dev));
                let vt = &vals[j * d..(j + 1) * d];
                fit += diff_norm(&bar, &vs).powi(2) / q as f64;
                curv += diff_norm(vt, &bar).powi(2) / q as f64;
                dev += diff_norm(vt, &vs).powi(2) / q as f64;
                if j % (q / 4).max(1) == 0 {
                    probes.push((x.clone(), t));
                }
            }
            Ok(PerSample {
                fit,
                curv,
                dev,
                resid,
                err: diff_norm(&uh, &u1),
                probes,
            })
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let eps_fit = (per.iter().map(|p| p.fit).sum::<f64>() / n).sqrt();
    let eps_curv = (per.iter().map(|p| p.curv).sum::<f64>() / n).sqrt();
    let eps_dev = (per.iter().map(|p| p.dev).sum::<f64>() / n).sqrt();
    let errors: Vec<f64> = per.iter().map(|p| p.err).collect();
    let terminal_error = errors.iter().sum::<f64>() / n;
    let terminal_sq = errors.iter().map(|e| e * e).sum::<f64>() / n;
    let lipschitz = match cfg.lipschitz {
        Some(l) => l,
        None => {
            let probes: Vec<(Vec<f64>, f64)> = per.iter().take(32).flat_map(|p| p.probes.clone()).collect();
            estimate_lipschitz(learned, &probes, cond, 0.5, 4, rng)?
        }
    };
    let bound = lipschitz.exp() * (eps_fit + eps_curv);
    Ok(TerminalReport {
        eps_fit,
        eps_curv,
        eps_dev,
        time_average_residual: per.iter().map(|p| p.resid).fold(0.0, f64::max),
        terminal_error,
        terminal_sq,
        lipschitz,
        bound,
        holds: terminal_error <= bound * (1.0 + cfg.slack) + 1e-14,
        errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevReport {
    pub etas: Vec<f64>,
    /// Empirical `P(‖û₁ − u₁‖ > η)`.
    pub empirical: Vec<f64>,
    /// `e^{2L}(ε_dev² + ε_curv²)/η²`.
    pub bounds: Vec<f64>,
    /// Cut-offs where the empirical rate exceeds the bound by more than `sigmas` binomial std.
    pub violations: Vec<f64>,
    pub samples: usize,
    pub sigmas: f64,
}

pub fn chebyshev_tail_check(report: &TerminalReport, etas: &[f64], sigmas: f64) -> ChebyshevReport {
    let n = report.errors.len().max(1) as f64;
    let c = (2.0 * report.lipschitz).exp() * (report.eps_dev.powi(2) + report.eps_curv.powi(2));
    let mut empirical = Vec::with_capacity(etas.len());
    let mut bounds = Vec::with_capacity(etas.len());
    let mut violations = Vec::new();
    for &eta in etas {
        let p = report.errors.iter().filter(|&&e| e > eta).count() as f64 / n;
        let b = if eta > 0.0 { c / (eta * eta) } else { f64::INFINITY };
        let bc = b.min(1.0);
        if p > bc + sigmas * (bc * (1.0 - bc) / n).sqrt() + 1e-12 {
            violations.push(eta);
        }
        empirical.push(p);
        bounds.push(b);
    }
    ChebyshevReport {
        etas: etas.to_vec(),
        empirical,
        bounds,
        violations,
        samples: report.errors.len(),
        sigmas,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepReport {
    pub cutoff: usize,
    /// `(mean ‖ŝ(u₀) − P_{≤K} S u₀‖²)^{1/2}`.
    pub eps_train: f64,
    /// Mean `‖P_{>K} S u₀‖²`.
    pub tail_energy: f64,
    /// `C_d ω(c_d/K)` from the coverage fit.
    pub coverage_term: f64,
    /// `(C_d ω(c_d/K) + ε_train²)^{1/2}`.
    pub bound: f64,
    /// `(tail + ε_train²)^{1/2}`, the cost of the index coupling when outputs are bandlimited.
    pub coupling_bound: f64,
    pub law_error_sliced: f64,
    pub holds: bool,
}

/// Law error between `truth[i] = S u₀ⁱ` and `surrogate[i] = ŝ(u₀ⁱ)` against the capacity,
/// coverage and fit bound. Surrogate outputs are assumed to be bandlimited to `cutoff`.
pub fn one_step_capacity_check(
    truth: &Ensemble,
    surrogate: &Ensemble,
    cutoff: usize,
    coverage: &CoverageReport,
    n_directions: usize,
    rng: &mut Rng,
) -> Result<OneStepReport> {
    if truth.len() != surrogate.len() {
        return Err(ReflowError::ShapeMismatch {
            expected: truth.len(),
            found: surrogate.len(),
        });
    }
    let n = truth.len() as f64;
    let mut fit = 0.0;
    let mut tail = 0.0;
    for (t, s) in truth.iter().zip(surrogate.iter()) {
        let p = project_bandlimited(t, cutoff, Band::Low)?;
        fit += s.sub(&p)?.l2_norm().powi(2);
        tail += t.sub(&p)?.l2_norm().powi(2);
    }
    let eps_train = (fit / n).sqrt();
    let tail_energy = tail / n;
    let coverage_term = coverage.coverage_term(cutoff);
    let bound = (coverage_term + eps_train * eps_train).sqrt();
    let law_error_sliced = sliced_w2(truth, surrogate, n_directions, rng)?;
    Ok(OneStepReport {
        cutoff,
        eps_train,
        tail_energy,
        coverage_term,
        bound,
        coupling_bound: (tail_energy + eps_train * eps_train).sqrt(),
        law_error_sliced,
        holds: law_error_sliced <= bound * (1.0 + 1e-9),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterTerms {
    pub coverage: f64,
    pub fit: f64,
    pub straightness: f64,
    pub lipschitz: f64,
    /// `∫(‖∂τv‖ + ‖J_u v·v‖)dτ`, averaged over paths of the learned flow.
    pub curvature_integral: f64,
    pub steps: usize,
    /// Sliced-W₂ between the target law and the N-step sampler output.
    pub w2_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterReport {
    pub terms: MasterTerms,
    /// `e^{L}(ε_fit + ε_curv)`.
    pub fit_straightness: f64,
    /// `(e^{L}/2) ∫curvature / N`.
    pub discretization: f64,
    pub sum: f64,
    /// `w2_estimate / sum`; the inequality holds with this constant.
    pub fitted_constant: f64,
    pub all_finite: bool,
}

pub fn master_inequality_report(terms: MasterTerms) -> MasterReport {
    let e = terms.lipschitz.exp();
    let fit_straightness = e * (terms.fit + terms.straightness);
    let discretization = 0.5 * e * terms.curvature_integral / terms.steps.max(1) as f64;
    let sum = terms.coverage + fit_straightness + discretization;
    let fitted_constant = if sum > 0.0 { terms.w2_estimate / sum } else { f64::INFINITY };
    let all_finite = [sum, terms.w2_estimate, fitted_constant].iter().all(|x| x.is_finite());
    MasterReport {
        terms,
        fit_straightness,
        discretization,
        sum,
        fitted_constant,
        all_finite,
    }
}

/// `∫₀¹ (‖∂τv‖ + ‖J_u v·v‖) dτ` along RK4 paths from each start (trapezoid rule), averaged.
pub fn mean_curvature_integral(v: &dyn VelocityField, starts: &[Vec<f64>], cond: &[f64], steps: usize) -> Result<f64> {
    if starts.is_empty() || steps == 0 {
        return Err(invalid("curvature integral needs starts and steps"));
    }
    let h = 1.0 / steps as f64;
    let per = starts
        .par_iter()
        .map(|u0| -> Result<f64> {
            let (_, tr) = integrate_fixed(v, u0, cond, Scheme::Rk4, steps, true)?;
            let path = tr.states.expect("recorded");
            let mut acc = 0.0;
            for (i, x) in path.iter().enumerate() {
                let (dt, jv) = material_terms(v, x, cond, i as f64 * h)?;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                acc += w * h * (norm(&dt) + norm(&jv));
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Toy end-to-end pipeline on a small periodic grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyPipelineConfig {
    pub n: usize,
    pub beta: f64,
    pub k_hi: usize,
    /// Capacity cutoff of the model.
    pub cutoff: usize,
    /// Variance kept in modes above the cutoff (keeps the model law non-degenerate).
    pub floor: f64,
    pub offset: f64,
    pub steps: usize,
    pub samples: usize,
    pub directions: usize,
    pub seed: u64,
}

impl Default for ToyPipelineConfig {
    fn default() -> Self {
        Self {
            n: 16,
            beta: 2.0,
            k_hi: 8,
            cutoff: 4,
            floor: 0.05,
            offset: 0.02,
            steps: 8,
            samples: 256,
            directions: 128,
            seed: 0,
        }
    }
}

/// Circulant covariance with per-mode variances `power` (unitary DFT convention).
fn circulant_cov(power: &[f64]) -> Vec<f64> {
    let n = power.len();
    let mut row = vec![0.0; n];
    for (lag, r) in row.iter_mut().enumerate() {
        *r = power
            .iter()
            .enumerate()
            .map(|(k, p)| p * (TAU * (k * lag) as f64 / n as f64).cos())
            .sum::<f64>()
            / n as f64;
    }
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cov[i * n + j] = row[(i + n - j) % n];
        }
    }
    cov
}

/// Target law `N(0, C)` with a power-law spectrum; model = comonotone velocity towards
/// the capacity-limited law (modes above the cutoff replaced by `floor` variance) plus a
/// constant offset, sampled with N Euler steps from `N(0, I)`.
pub fn toy_master_pipeline(cfg: &ToyPipelineConfig) -> Result<MasterReport> {
    let grid = Arc::new(Grid::torus_1d(cfg.n)?);
    let spec = crate::data::PowerLawFieldSpec::new_1d(cfg.n, cfg.beta, 1.0, cfg.k_hi as f64, cfg.seed);
    let power = spec.expected_power()?;
    let kmask: Vec<bool> = (0..cfg.n)
        .map(|p| crate::spectral::wavevector(&grid, p)[0].unsigned_abs() as usize <= cfg.cutoff)
        .collect();
    let capped: Vec<f64> = power.iter().zip(&kmask).map(|(p, k)| if *k { p.max(cfg.floor) } else { cfg.floor }).collect();
    let full: Vec<f64> = power.iter().map(|p| p.max(1e-9)).collect();
    let eye: Vec<f64> = (0..cfg.n * cfg.n).map(|i| if i % (cfg.n + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let zeros = vec![0.0; cfg.n];
    let target = GaussianTransportProblem::new(zeros.clone(), &eye, zeros.clone(), &circulant_cov(&full), CouplingKind::Independent)?;
    let model_law = GaussianTransportProblem::new(zeros.clone(), &eye, zeros.clone(), &circulant_cov(&capped), CouplingKind::Comonotone)?;
    let learned = PerturbedVelocity {
        base: &model_law,
        perturbation: Perturbation::Offset(vec![cfg.offset; cfg.n]),
    };
    let root = Rng::new(cfg.seed);
    let mut rng = root.fork(0);
    let truth_rows: Vec<Vec<f64>> = (0..cfg.samples).map(|_| target.sample_pair(&mut rng).map(|p| p.1)).collect::<Result<_>>()?;
    let truth = Ensemble::from_values(grid.clone(), truth_rows)?;
    let mut rng = root.fork(1);
    let starts: Vec<Vec<f64>> = (0..cfg.samples).map(|_| rng.normal_vec(cfg.n)).collect();
    let generated = starts
        .par_iter()
        .map(|u0| integrate_fixed(&learned, u0, &[], Scheme::Euler, cfg.steps, false).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let generated = Ensemble::from_values(grid.clone(), generated)?;
    let w2_estimate = sliced_w2(&truth, &generated, cfg.directions, &mut root.fork(2))?;

    let half = std::f64::consts::PI;
    let radii: Vec<f64> = (1..=cfg.n / 2).map(|i| i as f64 * half * 2.0 / cfg.n as f64).collect();
    let mut sf = ensemble_structure_function(&truth, &radii)?;
    sf.fit(radii[0], radii[radii.len() / 2])?;
    let modulus = sf.modulus().ok_or_else(|| invalid("structure-function fit failed"))?;
    let cutoffs: Vec<usize> = (1..=cfg.cutoff).collect();
    let cov = tail_coverage_report(&truth, &cutoffs, modulus, 1.0, 16, &mut root.fork(3))?;
    let coverage = cov.coverage_term(cfg.cutoff).sqrt();

    let held_out: Vec<Vec<f64>> = {
        let mut r = root.fork(4);
        (0..64).map(|_| r.normal_vec(cfg.n)).collect()
    };
    let tcfg = TerminalConfig::default();
    let term = terminal_decomposition_check(&model_law, &learned, &held_out, &[], &tcfg, &mut root.fork(5))?;

    let curvature_integral = mean_curvature_integral(&learned, &held_out[..16], &[], 128)?;
    Ok(master_inequality_report(MasterTerms {
        coverage,
        fit: term.eps_fit,
        straightness: term.eps_curv,
        lipschitz: term.lipschitz,
        curvature_integral,
        steps: cfg.steps,
        w2_estimate,
    }))
}

/// Spectral truncation `P_{≤K}` applied member-wise.
pub fn project_ensemble(ens: &Ensemble, cutoff: usize) -> Result<Ensemble> {
    Ensemble::new(ens.iter().map(|m| project_bandlimited(m, cutoff, Band::Low)).collect::<Result<Vec<Field>>>()?)
}

/// `P_{≤K}(f + σ g)` with `g` white noise: a deliberately imperfect bandlimited surrogate.
pub fn noisy_projection(ens: &Ensemble, cutoff: usize, sigma: f64, rng: &mut Rng) -> Result<Ensemble> {
    let members = ens
        .iter()
        .map(|m| {
            let noise = Field::new(m.grid().clone(), rng.normal_vec(m.grid().len()))?;
            let s = dft(&m.axpy(sigma, &noise)?);
            project_bandlimited(&idft(&s)?, cutoff, Band::Low)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::FnVelocity;

    #[test]
    fn lte_cases() {
        let c = FnVelocity::new(1, |_, _, o: &mut [f64]| o[0] = 3.0);
        let r = lte_order_check(&c, &[1.0], &[], 0.0, &[0.5, 0.25, 0.125]).unwrap();
        assert!(r.lte.iter().all(|&e| e < 1e-13));
        assert!(r.slope.is_none());

        let t = FnVelocity::new(1, |_, t, o: &mut [f64]| o[0] = t);
        let r = lte_order_check(&t, &[0.0], &[], 0.0, &[0.5, 0.25, 0.125]).unwrap();
        for (e, h) in r.lte.iter().zip(&r.dtaus) {
            assert!((e - h * h / 2.0).abs() < 1e-14);
        }
        assert!(r.ratios.iter().all(|q| (q - 1.0).abs() < 1e-3));

        let lin = FnVelocity::new(1, |u, _, o: &mut [f64]| o[0] = u[0]);
        let hs: Vec<f64> = (4..=10).map(|k| 0.5f64.powi(k)).collect();
        let r = lte_order_check(&lin, &[1.0], &[], 0.0, &hs).unwrap();
        let s = r.slope.unwrap();
        assert!((1.95..=2.05).contains(&s), "slope {s}");
    }

    #[test]
    fn global_order_and_domination() {
        let lin = FnVelocity::new(1, |u, _, o: &mut [f64]| o[0] = u[0]);
        let r = global_error_check(&lin, &[1.0], &[], &[16, 32, 64, 128, 256], 4096, &mut Rng::new(0)).unwrap();
        let s = r.slope.unwrap();
        assert!((0.95..=1.05).contains(&s), "slope {s}");
        assert!(r.dominated);
        assert!((r.curvature_integral - (std::f64::consts::E - 1.0)).abs() < 1e-6);
        let c = FnVelocity::new(1, |_, _, o: &mut [f64]| o[0] = 1.0);
        let r = global_error_check(&c, &[0.0], &[], &[4, 8], 64, &mut Rng::new(0)).unwrap();
        assert!(r.errors.iter().all(|&e| e < 1e-14));
    }

    #[test]
    fn global_error_scales_with_amplitude() {
        let errs: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&a| {
                let v = FnVelocity::new(1, move |u, t, o: &mut [f64]| o[0] = a * (4.0 * t).cos() - 0.5 * u[0]);
                global_error_check(&v, &[0.0], &[], &[32], 1024, &mut Rng::new(1)).unwrap().errors[0]
            })
            .collect();
        assert!((errs[1] / errs[0] / 2.0 - 1.0).abs() < 0.15);
        assert!((errs[2] / errs[0] / 4.0 - 1.0).abs() < 0.15);
    }

    fn translation() -> GaussianTransportProblem {
        GaussianTransportProblem::scalar(0.0, 1.0, 2.0, 1.0, CouplingKind::Comonotone).unwrap()
    }

    fn samples(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = Rng::new(seed);
        (0..n).map(|_| vec![r.normal()]).collect()
    }

    #[test]
    fn terminal_zero_offset_oscillation() {
        let p = translation();
        let xs = samples(64, 1);
        let cfg = TerminalConfig::default();
        let zero = PerturbedVelocity {
            base: &p,
            perturbation: Perturbation::None,
        };
        let r = terminal_decomposition_check(&p, &zero, &xs, &[], &cfg, &mut Rng::new(0)).unwrap();
        assert!(r.eps_fit < 1e-12 && r.eps_curv < 1e-12 && r.terminal_error < 1e-12);

        let off = PerturbedVelocity {
            base: &p,
            perturbation: Perturbation::Offset(vec![0.3]),
        };
        let r = terminal_decomposition_check(&p, &off, &xs, &[], &cfg, &mut Rng::new(0)).unwrap();
        assert!(r.eps_curv < 1e-12);
        assert!((r.eps_fit - 0.3).abs() < 1e-12);
        assert!((r.terminal_error - 0.3).abs() < 1e-12);
        assert!(r.holds);

        let osc = PerturbedVelocity {
            base: &p,
            perturbation: Perturbation::Oscillation(0.5),
        };
        let r = terminal_decomposition_check(&p, &osc, &xs, &[], &cfg, &mut Rng::new(0)).unwrap();
        assert!(r.eps_fit < 1e-12, "fit {}", r.eps_fit);
        assert!(r.eps_curv > 0.05);
        assert!(r.time_average_residual < 1e-12);
        assert!(r.holds);
        let ch = chebyshev_tail_check(&r, &[0.01, 0.05, 0.1, 1e9], 2.0);
        assert!(ch.violations.is_empty());
        assert_eq!(*ch.empirical.last().unwrap(), 0.0);
    }

    #[test]
    fn master_discretization_scaling() {
        let terms = |steps| MasterTerms {
            coverage: 0.1,
            fit: 0.0,
            straightness: 0.0,
            lipschitz: 0.5,
            curvature_integral: 2.0,
            steps,
            w2_estimate: 0.2,
        };
        let a = master_inequality_report(terms(8));
        let b = master_inequality_report(terms(16));
        assert!((a.discretization / b.discretization - 2.0).abs() < 1e-12);
        assert!(a.all_finite);
    }
}
