//! Synthetic benchmarks with known ground truth: power-law random fields, a 1D viscous
//! Burgers solver with the macro–micro perturbation protocol, a linear-Gaussian
//! conditional benchmark, and Gaussian-mixture targets.

use std::f64::consts::TAU;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ReflowError};
use crate::field::{Ensemble, Field, Grid};
use crate::gaussian::{Gaussian, GaussianMixture, MixtureSpec};
use crate::metrics::MacroProblem;
use crate::rng::Rng;
use crate::spectral::{idft, wavevector, Spectral};
use crate::transport::{ConditionalGaussianVelocity, Coupling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Amplitudes {
    /// `|û_k|` fixed by the power law, phases uniform.
    Deterministic,
    /// Complex Gaussian coefficients with the power law as variance (a stationary Gaussian law).
    Gaussian,
}

/// Random fields with `E|û_k|² ∝ |k|^{-β}` for `k_lo ≤ |k| ≤ k_hi` (Euclidean index norm)
/// and zero elsewhere, scaled so the expected mean-square value per point and channel is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFieldSpec {
    pub dims: Vec<usize>,
    pub channels: usize,
    pub beta: f64,
    pub k_lo: f64,
    pub k_hi: f64,
    pub amplitudes: Amplitudes,
    pub seed: u64,
}

impl PowerLawFieldSpec {
    pub fn new_1d(n: usize, beta: f64, k_lo: f64, k_hi: f64, seed: u64) -> Self {
        Self {
            dims: vec![n],
            channels: 1,
            beta,
            k_lo,
            k_hi,
            amplitudes: Amplitudes::Gaussian,
            seed,
        }
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::torus(&self.dims, self.channels)?))
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        let nyquist = grid.dims().iter().map(|&n| n / 2).min().unwrap_or(0) as f64;
        if !(self.beta > 0.0) {
            return Err(invalid("beta must be positive"));
        }
        if !(self.k_lo > 0.0 && self.k_lo <= self.k_hi && self.k_hi <= nyquist) {
            return Err(invalid(format!(
                "need 0 < k_lo <= k_hi <= Nyquist ({nyquist}), got [{}, {}]",
                self.k_lo, self.k_hi
            )));
        }
        Ok(())
    }

    /// Expected `|û_k|²` per point index (one channel), normalized to sum to the point count.
    pub fn expected_power(&self) -> Result<Vec<f64>> {
        let grid = self.grid()?;
        self.validate(&grid)?;
        let raw: Vec<f64> = (0..grid.points())
            .map(|p| {
                let k = wavevector(&grid, p);
                let r = k.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                if r >= self.k_lo && r <= self.k_hi {
                    r.powf(-self.beta)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            return Err(invalid("no lattice modes inside the band"));
        }
        let scale = grid.points() as f64 / total;
        Ok(raw.into_iter().map(|x| x * scale).collect())
    }
}

/// Index of the mode `-k` for point index `p`.
fn conjugate_index(grid: &Grid, p: usize) -> usize {
    let idx: Vec<usize> = grid
        .unravel(p)
        .into_iter()
        .zip(grid.dims())
        .map(|(i, &n)| (n - i) % n)
        .collect();
    grid.ravel(&idx)
}

fn power_law_member(spec: &PowerLawFieldSpec, grid: &Arc<Grid>, power: &[f64], rng: &mut Rng) -> Result<Field> {
    let m = grid.channels();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
    for c in 0..m {
        for p in 0..grid.points() {
            let q = conjugate_index(grid, p);
            if q < p || power[p] == 0.0 {
                continue;
            }
            let a = power[p].sqrt();
            let z = match (spec.amplitudes, p == q) {
                (Amplitudes::Deterministic, false) => Complex64::from_polar(a, TAU * rng.uniform()),
                (Amplitudes::Deterministic, true) => Complex64::new(if rng.uniform() < 0.5 { -a } else { a }, 0.0),
                (Amplitudes::Gaussian, false) => {
                    Complex64::new(rng.normal(), rng.normal()) * (a / std::f64::consts::SQRT_2)
                }
                (Amplitudes::Gaussian, true) => Complex64::new(a * rng.normal(), 0.0),
            };
            coeffs[p * m + c] = z;
            coeffs[q * m + c] = z.conj();
        }
    }
    idft(&Spectral::from_coeffs(grid.clone(), coeffs)?)
}

/// `n` members; member `i` draws from `Rng::new(seed).fork(i)`.
pub fn gen_power_law_ensemble(spec: &PowerLawFieldSpec, n: usize) -> Result<Ensemble> {
    if n == 0 {
        return Err(ReflowError::EmptyInput("ensemble size"));
    }
    let grid = spec.grid()?;
    let power = spec.expected_power()?;
    let root = Rng::new(spec.seed);
    let members = (0..n)
        .into_par_iter()
        .map(|i| power_law_member(spec, &grid, &power, &mut root.fork(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members)
}

/// One-dimensional viscous Burgers `u_t + (u²/2)_x = ν u_xx` on `[0, 2π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurgersSpec {
    pub n: usize,
    pub nu: f64,
    /// Physical time of one solve.
    pub t_final: f64,
    pub substeps: usize,
    /// Initial conditions use Fourier modes `1..=ic_modes`.
    pub ic_modes: usize,
    /// Standard deviation of the mode-1 coefficients; mode `k` uses `ic_amplitude / k`.
    pub ic_amplitude: f64,
    /// Added to every cosine coefficient (scaled by `1/k`) to move the initial law.
    pub ic_shift: f64,
    /// Radius of the L² perturbation ball used by the macro–micro protocol.
    pub epsilon: f64,
}

impl Default for BurgersSpec {
    fn default() -> Self {
        Self {
            n: 256,
            nu: 0.02,
            t_final: 0.5,
            substeps: 400,
            ic_modes: 8,
            ic_amplitude: 1.0,
            ic_shift: 0.0,
            epsilon: 0.1,
        }
    }
}

/// Advective Courant limit and RK4 diffusive stability limit used by the CFL check.
const CFL_ADVECTIVE: f64 = 0.5;
const RK4_DIFFUSIVE: f64 = 2.5;

impl BurgersSpec {
    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::torus_1d(self.n)?))
    }

    /// Largest retained wavenumber after 2/3 dealiasing.
    pub fn k_max(&self) -> usize {
        self.n / 3
    }

    /// Minimum stable substep count for an initial state with sup norm `u_max`
    /// (the maximum principle keeps `sup|u|` from growing).
    pub fn required_substeps(&self, u_max: f64) -> usize {
        let dx = TAU / self.n as f64;
        let km = self.k_max() as f64;
        let mut dt = RK4_DIFFUSIVE / (self.nu * km * km).max(f64::MIN_POSITIVE);
        if u_max > 0.0 {
            dt = dt.min(CFL_ADVECTIVE * dx / u_max);
        }
        (self.t_final / dt).ceil().max(1.0) as usize
    }

    fn validate(&self) -> Result<()> {
        if self.n < 8 || !(self.nu > 0.0) || !(self.t_final >= 0.0) || self.substeps == 0 {
            return Err(invalid("burgers: need n >= 8, nu > 0, t_final >= 0, substeps >= 1"));
        }
        if self.ic_modes == 0 || self.ic_modes > self.k_max() {
            return Err(invalid("burgers: ic_modes must lie in 1..=n/3"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(invalid("burgers: epsilon must be nonnegative"));
        }
        Ok(())
    }

    /// Draw from the initial-condition law: `Σ_k (a_k cos kx + b_k sin kx)` with
    /// `a_k, b_k ~ N(0, (A/k)²)` and `a_k` shifted by `shift/k`.
    pub fn sample_initial(&self, rng: &mut Rng) -> Result<Field> {
        self.validate()?;
        let coef: Vec<(f64, f64)> = (1..=self.ic_modes)
            .map(|k| {
                let s = self.ic_amplitude / k as f64;
                (s * rng.normal() + self.ic_shift / k as f64, s * rng.normal())
            })
            .collect();
        Field::from_fn(self.grid()?, |x, _| {
            coef.iter()
                .enumerate()
                .map(|(i, (a, b))| {
                    let k = (i + 1) as f64;
                    a * (k * x[0]).cos() + b * (k * x[0]).sin()
                })
                .sum()
        })
    }
}

/// Pseudo-spectral Burgers integrator with 2/3 dealiasing and classical RK4 in time.
pub struct BurgersSolver {
    spec: BurgersSpec,
    grid: Arc<Grid>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    keep: Vec<bool>,
}

impl BurgersSolver {
    pub fn new(spec: BurgersSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        let mut planner = FftPlanner::new();
        let k: Vec<f64> = (0..n)
            .map(|i| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 })
            .collect();
        let km = spec.k_max() as f64;
        let keep = k.iter().map(|x| x.abs() <= km && (x.abs() as usize) < n / 2).collect();
        Ok(Self {
            grid: spec.grid()?,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            spec,
            k,
            keep,
        })
    }

    pub fn spec(&self) -> &BurgersSpec {
        &self.spec
    }

    fn to_physical(&self, uh: &[Complex64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = uh.to_vec();
        self.inv.process(&mut buf);
        let n = self.spec.n as f64;
        buf.into_iter().map(|z| z.re / n).collect()
    }

    fn to_spectral(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    fn rhs(&self, uh: &[Complex64], out: &mut [Complex64]) {
        let u = self.to_physical(uh);
        let flux: Vec<f64> = u.iter().map(|x| 0.5 * x * x).collect();
        let fh = self.to_spectral(&flux);
        let nu = self.spec.nu;
        for i in 0..uh.len() {
            out[i] = if self.keep[i] {
                let k = self.k[i];
                Complex64::new(0.0, -k) * fh[i] - nu * k * k * uh[i]
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
    }

    /// Advance `u0` by `t_final`; returns the state after every substep when `record`.
    pub fn solve(&self, u0: &Field, record: bool) -> Result<(Field, Vec<Field>)> {
        if u0.grid().dims() != [self.spec.n] || u0.grid().channels() != 1 {
            return Err(invalid("burgers: initial state must live on the solver grid"));
        }
        let u_max = u0.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let required = self.spec.required_substeps(u_max);
        if self.spec.substeps < required {
            return Err(ReflowError::CflViolation {
                substeps: self.spec.substeps,
                required,
            });
        }
        let n = self.spec.n;
        let dt = self.spec.t_final / self.spec.substeps as f64;
        let mut uh = self.to_spectral(u0.values());
        for (z, keep) in uh.iter_mut().zip(&self.keep) {
            if !keep {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        let zero = Complex64::new(0.0, 0.0);
        let (mut k1, mut k2, mut k3, mut k4) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
        let mut tmp = vec![zero; n];
        let mut history = Vec::new();
        for step in 0..self.spec.substeps {
            self.rhs(&uh, &mut k1);
            tmp.iter_mut().zip(&uh).zip(&k1).for_each(|((t, u), k)| *t = u + k * (0.5 * dt));
            self.rhs(&tmp, &mut k2);
            tmp.iter_mut().zip(&uh).zip(&k2).for_each(|((t, u), k)| *t = u + k * (0.5 * dt));
            self.rhs(&tmp, &mut k3);
            tmp.iter_mut().zip(&uh).zip(&k3).for_each(|((t, u), k)| *t = u + k * dt);
            self.rhs(&tmp, &mut k4);
            for i in 0..n {
                uh[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dt / 6.0);
            }
            if uh.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(ReflowError::BlowUp {
                    tau: (step + 1) as f64 * dt,
                });
            }
            if record {
                history.push(Field::new(self.grid.clone(), self.to_physical(&uh))?);
            }
        }
        Ok((Field::new(self.grid.clone(), self.to_physical(&uh))?, history))
    }
}

/// One solve of length `t_final` (the discrete solution operator).
pub fn burgers_step(u0: &Field, spec: &BurgersSpec) -> Result<Field> {
    Ok(BurgersSolver::new(spec.clone())?.solve(u0, false)?.0)
}

/// Uniform draw from the L² ball of radius `eps` (grid quadrature norm).
pub fn ball_perturbation(grid: &Arc<Grid>, eps: f64, rng: &mut Rng) -> Result<Field> {
    let g = Field::new(grid.clone(), rng.normal_vec(grid.len()))?;
    let norm = g.l2_norm();
    let radius = eps * rng.uniform().powf(1.0 / grid.len() as f64);
    Ok(g.scaled(if norm > 0.0 { radius / norm } else { 0.0 }))
}

/// One macro condition with its perturbed micro initial states and their solutions.
#[derive(Debug, Clone)]
pub struct MacroSample {
    pub macro_initial: Field,
    pub micro_initial: Ensemble,
    pub micro_solution: Ensemble,
}

impl MacroSample {
    pub fn problem(&self) -> MacroProblem {
        MacroProblem {
            conditions: self.micro_initial.clone(),
            reference: self.micro_solution.clone(),
        }
    }
}

/// `n_macro` macros drawn from the initial law, each with `n_micro` members `u0 + δ`,
/// `‖δ‖ ≤ ε`, pushed through the solver.
pub fn macro_micro_dataset(spec: &BurgersSpec, n_macro: usize, n_micro: usize, rng: &Rng) -> Result<Vec<MacroSample>> {
    if n_macro == 0 || n_micro == 0 {
        return Err(ReflowError::EmptyInput("macro or micro count"));
    }
    let solver = BurgersSolver::new(spec.clone())?;
    let grid = spec.grid()?;
    (0..n_macro)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let macro_initial = spec.sample_initial(&mut r)?;
            let mut inits = Vec::with_capacity(n_micro);
            let mut sols = Vec::with_capacity(n_micro);
            for _ in 0..n_micro {
                let u = macro_initial.axpy(1.0, &ball_perturbation(&grid, spec.epsilon, &mut r)?)?;
                sols.push(solver.solve(&u, false)?.0);
                inits.push(u);
            }
            Ok(MacroSample {
                macro_initial,
                micro_initial: Ensemble::new(inits)?,
                micro_solution: Ensemble::new(sols)?,
            })
        })
        .collect()
}

/// Training pairs `(u0, S u0)` with `u0` from the initial law; `u0` doubles as the condition.
pub fn burgers_training_pairs(spec: &BurgersSpec, n: usize, rng: &Rng) -> Result<Coupling> {
    let solver = BurgersSolver::new(spec.clone())?;
    let pairs = (0..n)
        .into_par_iter()
        .map(|i| {
            let u0 = spec.sample_initial(&mut rng.fork(i as u64))?;
            let u1 = solver.solve(&u0, false)?.0;
            Ok((u0.into_values(), u1.into_values()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (u0, u1): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Coupling::new(u0.clone(), u1, Some(u0))
}

/// `c ~ N(cond_mean, I)`, `U1 | c ~ N(mean + G(c − cond_mean), S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianSpec {
    pub mean: Vec<f64>,
    /// Row-major `dim × cond_dim`.
    pub gain: Vec<f64>,
    pub cond_mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub cov: Vec<f64>,
    pub sigma0: f64,
}

impl LinearGaussianSpec {
    /// A small default: 2D state, 1D condition.
    pub fn toy() -> Self {
        Self {
            mean: vec![1.0, -0.5],
            gain: vec![0.8, -0.3],
            cond_mean: vec![0.0],
            cov: vec![0.5, 0.1, 0.1, 0.3],
            sigma0: 1.0,
        }
    }

    pub fn velocity(&self) -> Result<ConditionalGaussianVelocity> {
        ConditionalGaussianVelocity::new(
            self.mean.clone(),
            &self.gain,
            self.cond_mean.clone(),
            &self.cov,
            self.sigma0,
        )
    }

    pub fn sample_condition(&self, rng: &mut Rng) -> Vec<f64> {
        self.cond_mean.iter().map(|m| m + rng.normal()).collect()
    }

    /// `n` pairs; the source side is the condition itself.
    pub fn coupling(&self, n: usize, rng: &mut Rng) -> Result<Coupling> {
        let v = self.velocity()?;
        let mut c = Vec::with_capacity(n);
        let mut u1 = Vec::with_capacity(n);
        for _ in 0..n {
            let ci = self.sample_condition(rng);
            u1.push(v.sample_target(&ci, rng)?);
            c.push(ci);
        }
        Coupling::new(c.clone(), u1, Some(c))
    }
}

/// Builds the mixture and validates it (weights must sum to one).
pub fn gaussian_mixture(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<f64>>) -> Result<GaussianMixture> {
    GaussianMixture::from_spec(&MixtureSpec { weights, means, covs })
}

/// The 1D two-component mixture used for step-count comparisons.
pub fn bimodal_1d() -> GaussianMixture {
    let comps = vec![
        Gaussian::new(vec![-2.0], &[0.25]).expect("valid component"),
        Gaussian::new(vec![2.0], &[0.25]).expect("valid component"),
    ];
    GaussianMixture::new(vec![0.5, 0.5], comps).expect("valid mixture")
}

/// `n` i.i.d. draws.
pub fn mixture_samples(mix: &GaussianMixture, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| mix.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{dft, energy_spectrum, project_bandlimited, Band};

    #[test]
    fn power_law_is_real_reproducible_and_normalized() {
        let mut spec = PowerLawFieldSpec::new_1d(64, 2.0, 1.0, 20.0, 9);
        spec.amplitudes = Amplitudes::Deterministic;
        let a = gen_power_law_ensemble(&spec, 3).unwrap();
        let b = gen_power_law_ensemble(&spec, 3).unwrap();
        assert_eq!(a.members()[2].values(), b.members()[2].values());
        for m in a.iter() {
            let ms: f64 = m.values().iter().map(|x| x * x).sum::<f64>() / 64.0;
            assert!((ms - 1.0).abs() < 1e-12);
            for z in dft(m).coeffs() {
                assert!(z.norm() < 1e-9 || z.norm() > 1e-6);
            }
        }
    }

    #[test]
    fn deterministic_tail_matches_series() {
        let beta = 4.0;
        let mut spec = PowerLawFieldSpec::new_1d(128, beta, 1.0, 40.0, 1);
        spec.amplitudes = Amplitudes::Deterministic;
        let ens = gen_power_law_ensemble(&spec, 1).unwrap();
        let f = &ens.members()[0];
        let cut = 5usize;
        let tail = project_bandlimited(f, cut, Band::High).unwrap().l2_norm().powi(2);
        let total = f.l2_norm().powi(2);
        let series = |lo: usize, hi: usize| (lo..=hi).map(|k| (k as f64).powf(-beta)).sum::<f64>();
        let want = series(cut + 1, 40) / series(1, 40);
        assert!((tail / total - want).abs() < 1e-10);
    }

    #[test]
    fn power_law_slope_recovered() {
        let mut spec = PowerLawFieldSpec::new_1d(256, 2.5, 1.0, 100.0, 3);
        spec.amplitudes = Amplitudes::Deterministic;
        let ens = gen_power_law_ensemble(&spec, 1).unwrap();
        let f = &ens.members()[0];
        let e = energy_spectrum(f);
        let xs: Vec<f64> = (4..=64).map(|r| r as f64).collect();
        let ys: Vec<f64> = (4..=64).map(|r| e.energies[r]).collect();
        let (_, p) = crate::spectral::fit_power_law(&xs, &ys).unwrap();
        assert!((p + 2.5).abs() < 0.15, "slope {p}");
    }

    #[test]
    fn band_must_fit_below_nyquist() {
        let spec = PowerLawFieldSpec::new_1d(32, 2.0, 1.0, 40.0, 0);
        assert!(gen_power_law_ensemble(&spec, 1).is_err());
    }

    fn quiet_spec() -> BurgersSpec {
        BurgersSpec {
            n: 64,
            nu: 0.1,
            t_final: 1.0,
            substeps: 200,
            ..Default::default()
        }
    }

    #[test]
    fn burgers_zero_is_fixed_point() {
        let spec = quiet_spec();
        let u = burgers_step(&Field::zeros(spec.grid().unwrap()), &spec).unwrap();
        assert!(u.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn burgers_linear_regime_decay() {
        let spec = quiet_spec();
        let a = 1e-5;
        let u0 = Field::from_fn(spec.grid().unwrap(), |x, _| a * (2.0 * x[0]).sin()).unwrap();
        let u = burgers_step(&u0, &spec).unwrap();
        let got = u.l2_norm() / u0.l2_norm();
        let want = (-spec.nu * 4.0 * spec.t_final).exp();
        assert!((got / want - 1.0).abs() < 0.01, "{got} vs {want}");
    }

    #[test]
    fn burgers_dissipates_and_conserves_mean() {
        let spec = BurgersSpec {
            n: 128,
            t_final: 0.5,
            substeps: 200,
            ic_shift: 0.5,
            ..Default::default()
        };
        let u0 = spec.sample_initial(&mut Rng::new(4)).unwrap().axpy(1.0, &Field::constant(spec.grid().unwrap(), 0.3)).unwrap();
        let solver = BurgersSolver::new(spec).unwrap();
        let (_, hist) = solver.solve(&u0, true).unwrap();
        let mean = |f: &Field| f.values().iter().sum::<f64>() / f.values().len() as f64;
        let m0 = mean(&u0);
        let mut e_prev = u0.l2_norm();
        for f in &hist {
            assert!((mean(f) - m0).abs() < 1e-10);
            let e = f.l2_norm();
            assert!(e <= e_prev * (1.0 + 1e-12));
            e_prev = e;
        }
    }

    #[test]
    fn burgers_cfl_check() {
        let spec = BurgersSpec {
            substeps: 2,
            ..Default::default()
        };
        let u0 = spec.sample_initial(&mut Rng::new(0)).unwrap();
        assert!(matches!(burgers_step(&u0, &spec), Err(ReflowError::CflViolation { .. })));
    }

    #[test]
    fn macro_micro_ball_and_degenerate_radius() {
        let spec = BurgersSpec {
            n: 32,
            substeps: 100,
            epsilon: 0.2,
            ..Default::default()
        };
        let data = macro_micro_dataset(&spec, 2, 5, &Rng::new(1)).unwrap();
        for s in &data {
            for m in s.micro_initial.iter() {
                assert!(m.sub(&s.macro_initial).unwrap().l2_norm() <= 0.2 + 1e-12);
            }
        }
        let zero = BurgersSpec { epsilon: 0.0, ..spec };
        let data = macro_micro_dataset(&zero, 1, 4, &Rng::new(1)).unwrap();
        let first = data[0].micro_solution.members()[0].values().to_vec();
        assert!(data[0].micro_solution.iter().all(|m| m.values() == first.as_slice()));
    }

    #[test]
    fn mixture_weights_are_validated() {
        assert!(gaussian_mixture(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).is_err());
        let one = gaussian_mixture(vec![1.0], vec![vec![3.0]], vec![vec![4.0]]).unwrap();
        let xs = mixture_samples(&one, 20000, &mut Rng::new(2));
        let m = xs.iter().map(|x| x[0]).sum::<f64>() / 20000.0;
        assert!((m - 3.0).abs() < 4.0 * 2.0 / (20000f64).sqrt());
    }

    #[test]
    fn linear_gaussian_coupling_shapes() {
        let spec = LinearGaussianSpec::toy();
        let c = spec.coupling(10, &mut Rng::new(0)).unwrap();
        assert_eq!(c.len(), 10);
        assert_eq!(c.u1[0].len(), 2);
    }
}
