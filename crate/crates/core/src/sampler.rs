//! Deterministic ODE integration of velocity fields from τ = 0 to τ = 1: fixed-step
//! explicit schemes and the curvature-aware adaptive controller.
//!
//! The adaptive loop, per step: evaluate `v_t`, update the EMA trend with the raw `v_t`,
//! measure `s_t = ‖v_t − v_t^ema‖`, map it to `η_t`, blend
//! `ṽ_t = (1−α_t) v_t + α_t v_t^ema` with `α_t = η_t/(1+η_t)`, choose
//! `Δτ_t = clamp(c/√(κ1 s_t + κ2), Δτ_min, Δτ_max)` and take the Euler step
//! `u ← u + Δτ_t ṽ_t`. The last step is truncated so τ lands exactly on 1.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ReflowError};
use crate::field::{quadrature_norm, Field, Grid};
use crate::metrics::ConditionalSampler;
use crate::rng::Rng;
use crate::transport::VelocityField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Euler,
    /// Explicit midpoint.
    Midpoint,
    /// Heun's method.
    Rk2,
    /// Classical fourth order.
    Rk4,
}

impl Scheme {
    pub fn evals_per_step(self) -> usize {
        match self {
            Scheme::Euler => 1,
            Scheme::Midpoint | Scheme::Rk2 => 2,
            Scheme::Rk4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Midpoint => "midpoint",
            Scheme::Rk2 => "rk2",
            Scheme::Rk4 => "rk4",
        }
    }
}

/// How `κ2` is set each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kappa2 {
    Fixed(f64),
    /// `κ2 = L̂ ‖v_t‖`.
    Lipschitz(f64),
}

/// How `s_ref` in `η = η_max s/(s + s_ref)` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SRef {
    Fixed(f64),
    /// Quantile of the positive `s_t` seen during the first `warmup` steps; afterwards
    /// `s_ref ← decay·s_ref + (1−decay)·s_t` on steps with `s_t > 0` (decay 1 freezes it).
    Calibrated { quantile: f64, decay: f64, warmup: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// EMA decay λ.
    pub lambda: f64,
    pub kappa1: f64,
    pub kappa2: Kappa2,
    pub dtau_min: f64,
    pub dtau_max: f64,
    pub eta_max: f64,
    pub s_ref: SRef,
    pub c_step: f64,
    /// Blending is off while `s_t < gate · s_ref`.
    pub gate: f64,
    /// Added to `η_t` whenever blending is active and `s_t > 0`.
    pub damping: f64,
    /// Optional cap `Δτ_t ≤ max_growth · Δτ_{t−1}`.
    pub max_growth: Option<f64>,
    /// Multiplies `Δτ_t` when `s_t > 2 s_ref` (1 disables).
    pub spike_shrink: f64,
    pub max_steps: usize,
    /// Quadrature weight of the state norm (`Δ^d` for fields, 1 for plain vectors).
    pub norm_weight: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.35,
            kappa1: 1.0,
            kappa2: Kappa2::Lipschitz(1.0),
            dtau_min: 0.01,
            dtau_max: 0.125,
            eta_max: 1.0,
            s_ref: SRef::Calibrated {
                quantile: 0.5,
                decay: 1.0,
                warmup: 4,
            },
            c_step: 1.0,
            gate: 0.0,
            damping: 0.0,
            max_growth: None,
            spike_shrink: 1.0,
            max_steps: 10_000,
            norm_weight: 1.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(invalid(format!("controller: {m}")));
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad("lambda must lie in (0, 1)");
        }
        if !(self.kappa1 >= 0.0) {
            return bad("kappa1 must be nonnegative");
        }
        match self.kappa2 {
            Kappa2::Fixed(k) | Kappa2::Lipschitz(k) if !(k >= 0.0) => return bad("kappa2 must be nonnegative"),
            _ => {}
        }
        if !(self.dtau_min > 0.0 && self.dtau_min <= self.dtau_max && self.dtau_max <= 1.0) {
            return bad("need 0 < dtau_min <= dtau_max <= 1");
        }
        if !(self.eta_max >= 0.0) || !(self.c_step > 0.0) || !(self.gate >= 0.0) || !(self.damping >= 0.0) {
            return bad("eta_max, gate, damping must be >= 0 and c_step > 0");
        }
        match self.s_ref {
            SRef::Fixed(s) if !(s > 0.0) => return bad("s_ref must be positive"),
            SRef::Calibrated { quantile, decay, warmup }
                if !(0.0..=1.0).contains(&quantile) || !(0.0..=1.0).contains(&decay) || warmup == 0 =>
            {
                return bad("calibration needs quantile, decay in [0, 1] and warmup >= 1")
            }
            _ => {}
        }
        if let Some(g) = self.max_growth {
            if !(g >= 1.0) {
                return bad("max_growth must be >= 1");
            }
        }
        if !(self.spike_shrink > 0.0 && self.spike_shrink <= 1.0) {
            return bad("spike_shrink must lie in (0, 1]");
        }
        if self.max_steps == 0 || !(self.norm_weight > 0.0) {
            return bad("max_steps and norm_weight must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum IntegratorSpec {
    Fixed { scheme: Scheme, steps: usize },
    Adaptive(ControllerConfig),
}

impl IntegratorSpec {
    pub fn fixed(scheme: Scheme, steps: usize) -> Self {
        IntegratorSpec::Fixed { scheme, steps }
    }

    pub fn label(&self) -> String {
        match self {
            IntegratorSpec::Fixed { scheme, steps } => format!("{}-{steps}", scheme.name()),
            IntegratorSpec::Adaptive(_) => "adaptive".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// τ at the start of the step.
    pub tau: f64,
    pub dtau: f64,
    pub s: f64,
    pub alpha: f64,
    /// Velocity evaluations spent on this step.
    pub nfe: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerTrace {
    pub steps: Vec<TraceStep>,
    pub nfe: usize,
    pub final_tau: f64,
    /// State after every step, initial state first (only when requested).
    pub states: Option<Vec<Vec<f64>>>,
}

impl SamplerTrace {
    pub fn total_dtau(&self) -> f64 {
        self.steps.iter().map(|s| s.dtau).sum()
    }

    /// CSV `step,tau,dtau,s,alpha,nfe_cum`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,tau,dtau,s,alpha,nfe_cum\n");
        let mut cum = 0;
        for (i, s) in self.steps.iter().enumerate() {
            cum += s.nfe;
            out.push_str(&format!(
                "{i},{:.17e},{:.17e},{:.17e},{:.17e},{cum}\n",
                s.tau, s.dtau, s.s, s.alpha
            ));
        }
        out
    }
}

/// `v_ema ← λ v_ema + (1−λ) v`.
pub fn ema_update(ema: &mut [f64], v: &[f64], lambda: f64) {
    for (e, x) in ema.iter_mut().zip(v) {
        *e = lambda * *e + (1.0 - lambda) * x;
    }
}

/// Convex blend `(1−α)v + α v_ema`, `α = η/(1+η)`; returns α.
pub fn blend_velocity(v: &[f64], ema: &[f64], eta: f64, out: &mut [f64]) -> f64 {
    let alpha = eta / (1.0 + eta);
    for ((o, a), b) in out.iter_mut().zip(v).zip(ema) {
        *o = (1.0 - alpha) * a + alpha * b;
    }
    alpha
}

/// Saturating map `η = η_max s/(s + s_ref)`; 0 at `s = 0`.
pub fn eta_of_s(s: f64, eta_max: f64, s_ref: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        eta_max * s / (s + s_ref)
    }
}

/// `clamp(c/√(κ1 s + κ2), Δτ_min, Δτ_max)`; `Δτ_max` when `κ1 s + κ2 = 0`.
pub fn step_size(s: f64, kappa1: f64, kappa2: f64, c_step: f64, dtau_min: f64, dtau_max: f64) -> f64 {
    let den = kappa1 * s + kappa2;
    if den <= 0.0 {
        return dtau_max;
    }
    (c_step / den.sqrt()).clamp(dtau_min, dtau_max)
}

fn check_finite(u: &[f64], tau: f64) -> Result<()> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ReflowError::BlowUp { tau })
    }
}

struct Counted<'a> {
    v: &'a dyn VelocityField,
    cond: &'a [f64],
    calls: usize,
}

impl Counted<'_> {
    fn eval(&mut self, u: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.calls += 1;
        self.v.eval(u, self.cond, tau, out)?;
        check_finite(out, tau)
    }
}

/// Lands on exactly 1 when the remaining interval is within rounding.
fn advance(tau: f64, dtau: f64) -> (f64, f64) {
    let next = tau + dtau;
    if 1.0 - next <= 1e-12 {
        (1.0 - tau, 1.0)
    } else {
        (dtau, next)
    }
}

fn check_dims(v: &dyn VelocityField, u: &[f64], cond: &[f64]) -> Result<()> {
    crate::error::ensure_len(v.state_dim(), u.len())?;
    crate::error::ensure_len(v.cond_dim(), cond.len())
}

/// Uniform-step explicit integration with `Δτ = 1/steps`.
pub fn integrate_fixed(
    v: &dyn VelocityField,
    u_init: &[f64],
    cond: &[f64],
    scheme: Scheme,
    steps: usize,
    record: bool,
) -> Result<(Vec<f64>, SamplerTrace)> {
    if steps == 0 {
        return Err(invalid("steps must be >= 1"));
    }
    check_dims(v, u_init, cond)?;
    let n = u_init.len();
    let h = 1.0 / steps as f64;
    let mut f = Counted { v, cond, calls: 0 };
    let mut u = u_init.to_vec();
    let mut trace = SamplerTrace {
        states: record.then(|| vec![u.clone()]),
        ..Default::default()
    };
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..steps {
        let t = i as f64 * h;
        let before = f.calls;
        match scheme {
            Scheme::Euler => {
                f.eval(&u, t, &mut k1)?;
                u.iter_mut().zip(&k1).for_each(|(x, k)| *x += h * k);
            }
            Scheme::Midpoint => {
                f.eval(&u, t, &mut k1)?;
                tmp.iter_mut().zip(&u).zip(&k1).for_each(|((y, x), k)| *y = x + 0.5 * h * k);
                f.eval(&tmp, t + 0.5 * h, &mut k2)?;
                u.iter_mut().zip(&k2).for_each(|(x, k)| *x += h * k);
            }
            Scheme::Rk2 => {
                f.eval(&u, t, &mut k1)?;
                tmp.iter_mut().zip(&u).zip(&k1).for_each(|((y, x), k)| *y = x + h * k);
                f.eval(&tmp, t + h, &mut k2)?;
                u.iter_mut()
                    .zip(k1.iter().zip(&k2))
                    .for_each(|(x, (a, b))| *x += 0.5 * h * (a + b));
            }
            Scheme::Rk4 => {
                f.eval(&u, t, &mut k1)?;
                tmp.iter_mut().zip(&u).zip(&k1).for_each(|((y, x), k)| *y = x + 0.5 * h * k);
                f.eval(&tmp, t + 0.5 * h, &mut k2)?;
                tmp.iter_mut().zip(&u).zip(&k2).for_each(|((y, x), k)| *y = x + 0.5 * h * k);
                f.eval(&tmp, t + 0.5 * h, &mut k3)?;
                tmp.iter_mut().zip(&u).zip(&k3).for_each(|((y, x), k)| *y = x + h * k);
                f.eval(&tmp, t + h, &mut k4)?;
                for j in 0..n {
                    u[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
            }
        }
        check_finite(&u, t + h)?;
        trace.steps.push(TraceStep {
            tau: t,
            dtau: h,
            s: 0.0,
            alpha: 0.0,
            nfe: f.calls - before,
        });
        if let Some(s) = trace.states.as_mut() {
            s.push(u.clone());
        }
    }
    trace.nfe = f.calls;
    trace.final_tau = 1.0;
    Ok((u, trace))
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let x = q * (v.len() - 1) as f64;
    let i = x.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (x - i as f64) * (v[j] - v[i])
}

/// Running state of the `s_ref` calibration.
struct Calibration {
    samples: Vec<f64>,
    value: Option<f64>,
}

impl Calibration {
    fn update(&mut self, s: f64, step: usize, cfg: &SRef) -> Option<f64> {
        match *cfg {
            SRef::Fixed(v) => Some(v),
            SRef::Calibrated { quantile: q, decay, warmup } => {
                if step < warmup {
                    if s > 0.0 {
                        self.samples.push(s);
                    }
                    if !self.samples.is_empty() {
                        self.value = Some(quantile(&self.samples, q));
                    }
                } else if s > 0.0 {
                    self.value = Some(match self.value {
                        Some(r) => decay * r + (1.0 - decay) * s,
                        None => s,
                    });
                }
                self.value
            }
        }
    }
}

/// Curvature-aware adaptive integration (see module docs).
pub fn integrate_adaptive(
    v: &dyn VelocityField,
    u_init: &[f64],
    cond: &[f64],
    cfg: &ControllerConfig,
    record: bool,
) -> Result<(Vec<f64>, SamplerTrace)> {
    cfg.validate()?;
    check_dims(v, u_init, cond)?;
    let n = u_init.len();
    let w = cfg.norm_weight;
    let mut f = Counted { v, cond, calls: 0 };
    let mut u = u_init.to_vec();
    let mut trace = SamplerTrace {
        states: record.then(|| vec![u.clone()]),
        ..Default::default()
    };
    let mut vt = vec![0.0; n];
    let mut ema: Option<Vec<f64>> = None;
    let mut blended = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut calib = Calibration {
        samples: Vec::new(),
        value: None,
    };
    let mut prev_dtau: Option<f64> = None;
    let mut tau = 0.0;
    let mut step = 0;
    while tau < 1.0 {
        if step >= cfg.max_steps {
            return Err(ReflowError::StepCapExceeded {
                cap: cfg.max_steps,
                tau,
            });
        }
        let before = f.calls;
        f.eval(&u, tau, &mut vt)?;
        let e = match ema.as_mut() {
            None => ema.insert(vt.clone()),
            Some(e) => {
                ema_update(e, &vt, cfg.lambda);
                e
            }
        };
        diff.iter_mut().zip(vt.iter().zip(e.iter())).for_each(|(d, (a, b))| *d = a - b);
        let s = quadrature_norm(&diff, w);
        let s_ref = calib.update(s, step, &cfg.s_ref);
        let eta = match s_ref {
            _ if s <= 0.0 => 0.0,
            None => eta_of_s(s, cfg.eta_max, s) + cfg.damping,
            Some(r) if s < cfg.gate * r => 0.0,
            Some(r) => eta_of_s(s, cfg.eta_max, r) + cfg.damping,
        };
        let alpha = blend_velocity(&vt, e, eta, &mut blended);
        let kappa2 = match cfg.kappa2 {
            Kappa2::Fixed(k) => k,
            Kappa2::Lipschitz(l) => l * quadrature_norm(&vt, w),
        };
        let mut dtau = step_size(s, cfg.kappa1, kappa2, cfg.c_step, cfg.dtau_min, cfg.dtau_max);
        if let (Some(g), Some(p)) = (cfg.max_growth, prev_dtau) {
            dtau = dtau.min(g * p);
        }
        if let Some(r) = s_ref {
            if s > 2.0 * r {
                dtau *= cfg.spike_shrink;
            }
        }
        dtau = dtau.clamp(cfg.dtau_min, cfg.dtau_max);
        let (dtau, next) = advance(tau, dtau.min(1.0 - tau));
        u.iter_mut().zip(&blended).for_each(|(x, b)| *x += dtau * b);
        check_finite(&u, tau)?;
        trace.steps.push(TraceStep {
            tau,
            dtau,
            s,
            alpha,
            nfe: f.calls - before,
        });
        if let Some(st) = trace.states.as_mut() {
            st.push(u.clone());
        }
        prev_dtau = Some(dtau);
        tau = next;
        step += 1;
    }
    trace.nfe = f.calls;
    trace.final_tau = tau;
    Ok((u, trace))
}

/// Dispatch on the integrator spec.
pub fn integrate(
    v: &dyn VelocityField,
    u_init: &[f64],
    cond: &[f64],
    spec: &IntegratorSpec,
    record: bool,
) -> Result<(Vec<f64>, SamplerTrace)> {
    match spec {
        IntegratorSpec::Fixed { scheme, steps } => integrate_fixed(v, u_init, cond, *scheme, *steps, record),
        IntegratorSpec::Adaptive(cfg) => integrate_adaptive(v, u_init, cond, cfg, record),
    }
}

/// Field wrapper: the adaptive norm uses the grid quadrature weight.
pub fn integrate_field(
    v: &dyn VelocityField,
    u_init: &Field,
    cond: &[f64],
    spec: &IntegratorSpec,
) -> Result<(Field, SamplerTrace)> {
    let spec = with_weight(spec, u_init.grid().cell_volume());
    let (u, trace) = integrate(v, u_init.values(), cond, &spec, false)?;
    Ok((Field::new(u_init.grid().clone(), u)?, trace))
}

fn with_weight(spec: &IntegratorSpec, w: f64) -> IntegratorSpec {
    match spec {
        IntegratorSpec::Adaptive(c) => IntegratorSpec::Adaptive(ControllerConfig {
            norm_weight: w,
            ..c.clone()
        }),
        s => s.clone(),
    }
}

/// Conditional generator: draws `σ0 ξ` on the grid and integrates the velocity to τ = 1.
pub struct OdeSampler<'a> {
    pub velocity: &'a dyn VelocityField,
    pub grid: Arc<Grid>,
    pub spec: IntegratorSpec,
    pub sigma0: f64,
}

impl OdeSampler<'_> {
    pub fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        rng.normal_vec(self.grid.len()).into_iter().map(|x| self.sigma0 * x).collect()
    }
}

impl ConditionalSampler for OdeSampler<'_> {
    fn sample(&self, condition: &Field, rng: &mut Rng) -> Result<(Field, usize)> {
        let init = Field::new(self.grid.clone(), self.initial_state(rng))?;
        let (out, trace) = integrate_field(self.velocity, &init, condition.values(), &self.spec)?;
        Ok((out, trace.nfe))
    }
}

/// The 20-configuration robustness grid, each a perturbation of `base`.
pub fn sweep_grid(base: &ControllerConfig) -> Vec<(String, ControllerConfig)> {
    let with = |f: &dyn Fn(&mut ControllerConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let calib = |q: f64, d: f64| SRef::Calibrated {
        quantile: q,
        decay: d,
        warmup: 4,
    };
    let mut out = vec![("baseline".to_string(), base.clone())];
    for l in [0.25, 0.45] {
        out.push((format!("ema_{l:.2}"), with(&|c| c.lambda = l)));
    }
    for a in [0.05, 0.12, 0.20] {
        out.push((format!("alpha_{a:.2}"), with(&|c| c.eta_max = a / (1.0 - a))));
    }
    for g in [1.5, 2.0, 2.5] {
        out.push((format!("gamma_{g:.1}"), with(&|c| c.kappa1 = g)));
    }
    for g in [0.5, 0.7] {
        out.push((format!("gate_{g:.2}"), with(&|c| c.gate = g)));
    }
    for (q, d) in [(0.7, 0.9), (0.8, 0.98)] {
        out.push((format!("calib_{q:.2}_{d:.2}"), with(&|c| c.s_ref = calib(q, d))));
    }
    for (g, k) in [(1.5, 0.75), (2.0, 0.85)] {
        out.push((
            format!("adapt_{g:.1}_{k:.2}"),
            with(&|c| {
                c.max_growth = Some(g);
                c.spike_shrink = k;
            }),
        ));
    }
    out.push(("no_ortho_filter".into(), base.clone()));
    for d in [0.05, 0.10, 0.20, 0.30] {
        out.push((format!("damp_{d:.2}"), with(&|c| c.damping = d)));
    }
    out
}
