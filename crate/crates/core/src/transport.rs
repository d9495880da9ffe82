//! Couplings, chord interpolation, barycentric velocities and the rectified-flow
//! regression.
//!
//! States are flat `f64` vectors here (a field's `values()`), so the same code serves
//! scalar toy problems and gridded fields.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Result, ReflowError};
use crate::field::Field;
use crate::gaussian::{mat, psd_eigen, row_major, sqrtm, Gaussian, GaussianMixture};
use crate::io::Checkpoint;
use crate::rng::Rng;

/// A time-dependent velocity `v(u, c, τ)` on flat state vectors.
pub trait VelocityField: Sync {
    fn state_dim(&self) -> usize;

    fn cond_dim(&self) -> usize {
        0
    }

    fn eval(&self, u: &[f64], cond: &[f64], tau: f64, out: &mut [f64]) -> Result<()>;
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn cond_dim(&self) -> usize {
        (**self).cond_dim()
    }
    fn eval(&self, u: &[f64], cond: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        (**self).eval(u, cond, tau, out)
    }
}

/// Unconditional velocity from a closure `f(u, τ, out)`.
pub struct FnVelocity<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], f64, &mut [f64]) + Sync> FnVelocity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], f64, &mut [f64]) + Sync> VelocityField for FnVelocity<F> {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, u: &[f64], _cond: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        (self.f)(u, tau, out);
        Ok(())
    }
}

/// `(1−τ)u0 + τu1`.
pub fn chord_point(u0: &Field, u1: &Field, tau: f64) -> Result<Field> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid(format!("tau = {tau} outside [0, 1]")));
    }
    u0.same_grid(u1)?;
    let values = u0
        .values()
        .iter()
        .zip(u1.values())
        .map(|(a, b)| (1.0 - tau) * a + tau * b)
        .collect();
    Field::new(u0.grid().clone(), values)
}

/// Ordered pairs `(u0, u1)` with optional per-pair conditions; an empirical coupling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub u0: Vec<Vec<f64>>,
    pub u1: Vec<Vec<f64>>,
    pub cond: Option<Vec<Vec<f64>>>,
}

impl Coupling {
    pub fn new(u0: Vec<Vec<f64>>, u1: Vec<Vec<f64>>, cond: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if u0.is_empty() {
            return Err(ReflowError::EmptyInput("coupling pairs"));
        }
        ensure_len(u0.len(), u1.len())?;
        if let Some(c) = &cond {
            ensure_len(u0.len(), c.len())?;
        }
        let (d0, d1) = (u0[0].len(), u1[0].len());
        if u0.iter().any(|x| x.len() != d0) || u1.iter().any(|x| x.len() != d1) {
            return Err(invalid("coupling members disagree on dimension"));
        }
        Ok(Self { u0, u1, cond })
    }

    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    Independent,
    /// Deterministic optimal-transport pairing `U1 = m1 + A(U0 − m0)`.
    Comonotone,
}

/// Gaussian-to-Gaussian transport with an analytic barycentric velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTransportProblem {
    mean0: DVector<f64>,
    mean1: DVector<f64>,
    cov0: DMatrix<f64>,
    cov1: DMatrix<f64>,
    kind: CouplingKind,
    /// Cov(U0, U1).
    cross: DMatrix<f64>,
    /// OT map matrix (comonotone) or zero.
    map: DMatrix<f64>,
    chol0: DMatrix<f64>,
}

impl GaussianTransportProblem {
    /// Covariances are row-major and must be symmetric positive definite.
    pub fn new(
        mean0: Vec<f64>,
        cov0: &[f64],
        mean1: Vec<f64>,
        cov1: &[f64],
        kind: CouplingKind,
    ) -> Result<Self> {
        let d = mean0.len();
        if d == 0 || mean1.len() != d {
            return Err(invalid("transport problem means must share a positive dimension"));
        }
        let c0 = mat(cov0, d)?;
        let c1 = mat(cov1, d)?;
        for c in [&c0, &c1] {
            psd_eigen(c)?;
            if c.clone().cholesky().is_none() {
                return Err(invalid("covariance must be positive definite"));
            }
        }
        let chol0 = c0.clone().cholesky().unwrap().l();
        let (map, cross) = match kind {
            CouplingKind::Independent => (DMatrix::zeros(d, d), DMatrix::zeros(d, d)),
            CouplingKind::Comonotone => {
                let s = sqrtm(&c0)?;
                let s_inv = s
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| invalid("cov0 is singular"))?;
                let a = &s_inv * sqrtm(&(&s * &c1 * &s))? * &s_inv;
                let a = (&a + a.transpose()) * 0.5;
                let cross = &c0 * &a;
                (a, cross)
            }
        };
        Ok(Self {
            mean0: DVector::from_vec(mean0),
            mean1: DVector::from_vec(mean1),
            cov0: c0,
            cov1: c1,
            kind,
            cross,
            map,
            chol0,
        })
    }

    /// Scalar problem `N(m0, s0²) → N(m1, s1²)`.
    pub fn scalar(m0: f64, s0: f64, m1: f64, s1: f64, kind: CouplingKind) -> Result<Self> {
        if !(s0 > 0.0 && s1 > 0.0) {
            return Err(ReflowError::InvalidParameter(format!("standard deviations must be positive, got {s0} and {s1}")));
        }
        Self::new(vec![m0], &[s0 * s0], vec![m1], &[s1 * s1], kind)
    }

    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    pub fn mean0(&self) -> &[f64] {
        self.mean0.as_slice()
    }

    pub fn mean1(&self) -> &[f64] {
        self.mean1.as_slice()
    }

    pub fn cov0(&self) -> Vec<f64> {
        row_major(&self.cov0)
    }

    pub fn cov1(&self) -> Vec<f64> {
        row_major(&self.cov1)
    }

    /// Mean and covariance of `U_τ = (1−τ)U0 + τU1`.
    pub fn interpolant_law(&self, tau: f64) -> (Vec<f64>, Vec<f64>) {
        let m = &self.mean0 * (1.0 - tau) + &self.mean1 * tau;
        (m.as_slice().to_vec(), row_major(&self.interp_cov(tau)))
    }

    fn interp_cov(&self, tau: f64) -> DMatrix<f64> {
        let s = 1.0 - tau;
        &self.cov0 * (s * s)
            + &self.cov1 * (tau * tau)
            + (&self.cross + self.cross.transpose()) * (s * tau)
    }

    /// Affine coefficients `(a, B)` with `v⋆(u, τ) = a + B u`.
    pub fn velocity_coefficients(&self, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, b) = self.coefficients(tau)?;
        Ok((a.as_slice().to_vec(), row_major(&b)))
    }

    fn coefficients(&self, tau: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid(format!("tau = {tau} outside [0, 1]")));
        }
        let var = self.interp_cov(tau);
        // Cov(U1 − U0, U_τ)
        let cov_d = self.cross.transpose() * (1.0 - tau) + &self.cov1 * tau
            - &self.cov0 * (1.0 - tau)
            - &self.cross * tau;
        let scale = var.amax().max(f64::MIN_POSITIVE);
        let chol = var
            .clone()
            .cholesky()
            .filter(|c| c.l().diagonal().iter().all(|&x| x * x > 1e-13 * scale))
            .ok_or(ReflowError::DegenerateLaw { tau })?;
        // B = cov_d · var⁻¹  ⇔  var · Bᵀ = cov_dᵀ
        let b = chol.solve(&cov_d.transpose()).transpose();
        let mean_d = &self.mean1 - &self.mean0;
        let mean_t = &self.mean0 * (1.0 - tau) + &self.mean1 * tau;
        let a = mean_d - &b * mean_t;
        Ok((a, b))
    }

    /// `v⋆(u, τ) = E[U1 − U0 | U_τ = u]`.
    pub fn barycentric_velocity(&self, u: &[f64], tau: f64) -> Result<Vec<f64>> {
        ensure_len(self.dim(), u.len())?;
        let (a, b) = self.coefficients(tau)?;
        Ok((a + b * DVector::from_column_slice(u)).as_slice().to_vec())
    }

    pub fn sample_source(&self, rng: &mut Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.normal());
        (&self.mean0 + &self.chol0 * z).as_slice().to_vec()
    }

    /// One draw `(u0, u1)` from the coupling.
    pub fn sample_pair(&self, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
        let u0 = self.sample_source(rng);
        let u1 = match self.kind {
            CouplingKind::Comonotone => {
                let x = DVector::from_column_slice(&u0) - &self.mean0;
                (&self.mean1 + &self.map * x).as_slice().to_vec()
            }
            CouplingKind::Independent => {
                Gaussian::new(self.mean1.as_slice().to_vec(), &self.cov1())?.sample(rng)
            }
        };
        Ok((u0, u1))
    }

    pub fn coupling(&self, n: usize, rng: &mut Rng) -> Result<Coupling> {
        let (u0, u1): (Vec<_>, Vec<_>) = (0..n)
            .map(|_| self.sample_pair(rng))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Coupling::new(u0, u1, None)
    }

    fn to_weights(&self) -> Vec<f64> {
        let mut w = self.mean0.as_slice().to_vec();
        w.extend(row_major(&self.cov0));
        w.extend_from_slice(self.mean1.as_slice());
        w.extend(row_major(&self.cov1));
        w
    }

    fn from_weights(d: usize, kind: CouplingKind, w: &[f64]) -> Result<Self> {
        ensure_len(2 * d + 2 * d * d, w.len())?;
        let (m0, rest) = w.split_at(d);
        let (c0, rest) = rest.split_at(d * d);
        let (m1, c1) = rest.split_at(d);
        Self::new(m0.to_vec(), c0, m1.to_vec(), c1, kind)
    }
}

impl VelocityField for GaussianTransportProblem {
    fn state_dim(&self) -> usize {
        self.dim()
    }

    fn eval(&self, u: &[f64], _cond: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        if self.dim() == 1 {
            ensure_len(1, u.len())?;
            out[0] = self.scalar_velocity(u[0], tau)?;
            return Ok(());
        }
        out.copy_from_slice(&self.barycentric_velocity(u, tau)?);
        Ok(())
    }
}

impl GaussianTransportProblem {
    /// Allocation-free `v⋆` for the scalar case.
    fn scalar_velocity(&self, u: f64, tau: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid(format!("tau = {tau} outside [0, 1]")));
        }
        let (c0, c1, x) = (self.cov0[(0, 0)], self.cov1[(0, 0)], self.cross[(0, 0)]);
        let s = 1.0 - tau;
        let var = c0 * s * s + c1 * tau * tau + 2.0 * x * s * tau;
        if !(var > 0.0) {
            return Err(ReflowError::DegenerateLaw { tau });
        }
        let cov_d = x * s + c1 * tau - c0 * s - x * tau;
        let (m0, m1) = (self.mean0[0], self.mean1[0]);
        Ok(m1 - m0 + cov_d / var * (u - (m0 * s + m1 * tau)))
    }
}

/// Noise-to-target velocity for a linear-Gaussian conditional law
/// `U1 | c ~ N(m + G(c − c̄), S)` under the interpolant `τU1 + σ0(1−τ)ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussianVelocity {
    mean: DVector<f64>,
    gain: DMatrix<f64>,
    cond_mean: DVector<f64>,
    noise: Gaussian,
    sigma0: f64,
}

impl ConditionalGaussianVelocity {
    /// `gain` is row-major `d × c`, `cov` row-major `d × d` (PSD).
    pub fn new(
        mean: Vec<f64>,
        gain: &[f64],
        cond_mean: Vec<f64>,
        cov: &[f64],
        sigma0: f64,
    ) -> Result<Self> {
        let d = mean.len();
        let c = cond_mean.len();
        ensure_len(d * c, gain.len())?;
        if !(sigma0 > 0.0) {
            return Err(invalid("sigma0 must be positive"));
        }
        Ok(Self {
            noise: Gaussian::new(vec![0.0; d], cov)?,
            mean: DVector::from_vec(mean),
            gain: DMatrix::from_row_slice(d, c, gain),
            cond_mean: DVector::from_vec(cond_mean),
            sigma0,
        })
    }

    /// Conditional mean `m + G(c − c̄)`.
    pub fn conditional_mean(&self, cond: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.cond_mean.len(), cond.len())?;
        let c = DVector::from_column_slice(cond) - &self.cond_mean;
        Ok((&self.mean + &self.gain * c).as_slice().to_vec())
    }

    /// Draw `U1 | c`.
    pub fn sample_target(&self, cond: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let m = self.conditional_mean(cond)?;
        Ok(self.noise.sample(rng).iter().zip(&m).map(|(a, b)| a + b).collect())
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn noise_cov(&self) -> Vec<f64> {
        self.noise.cov()
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut w = self.mean.as_slice().to_vec();
        w.extend(row_major(&self.gain));
        w.extend_from_slice(self.cond_mean.as_slice());
        w.extend(self.noise.cov());
        w.push(self.sigma0);
        Checkpoint {
            kind: KIND_CONDITIONAL,
            meta: vec![self.mean.len() as u32, self.cond_mean.len() as u32],
            weights: w,
        }
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (d, c) = meta2(ck)?;
        ensure_len(d + d * c + c + d * d + 1, ck.weights.len())?;
        let w = &ck.weights;
        Self::new(
            w[..d].to_vec(),
            &w[d..d + d * c],
            w[d + d * c..d + d * c + c].to_vec(),
            &w[d + d * c + c..d + d * c + c + d * d],
            w[w.len() - 1],
        )
    }
}

impl VelocityField for ConditionalGaussianVelocity {
    fn state_dim(&self) -> usize {
        self.mean.len()
    }

    fn cond_dim(&self) -> usize {
        self.cond_mean.len()
    }

    fn eval(&self, u: &[f64], cond: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        ensure_len(self.mean.len(), u.len())?;
        let a = self.conditional_mean(cond)?;
        let s = 1.0 - tau;
        let s2 = self.sigma0 * self.sigma0;
        // v = a + (τS − σ0²(1−τ)I)(τ²S + σ0²(1−τ)²I)⁻¹(u − τa), diagonal in S's eigenbasis
        let r: Vec<f64> = u.iter().zip(&a).map(|(x, m)| x - tau * m).collect();
        let mut y = self.noise.rotate_in(&r);
        for (yi, &l) in y.iter_mut().zip(self.noise.eigenvalues()) {
            let den = tau * tau * l + s2 * s * s;
            if !(den > 0.0) {
                return Err(ReflowError::DegenerateLaw { tau });
            }
            *yi *= (tau * l - s2 * s) / den;
        }
        let corr = self.noise.rotate_out(&y);
        for ((o, m), c) in out.iter_mut().zip(&a).zip(corr.iter()) {
            *o = m + c;
        }
        Ok(())
    }
}

/// Noise-to-mixture velocity under the independent coupling `ξ ~ N(0, I)`,
/// `U_τ = τU1 + σ0(1−τ)ξ`, target `U1 − σ0ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureVelocity {
    mixture: GaussianMixture,
    sigma0: f64,
}

impl MixtureVelocity {
    pub fn new(mixture: GaussianMixture, sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0) {
            return Err(invalid("sigma0 must be positive"));
        }
        Ok(Self { mixture, sigma0 })
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }
}

impl VelocityField for MixtureVelocity {
    fn state_dim(&self) -> usize {
        self.mixture.dim()
    }

    fn eval(&self, u: &[f64], _cond: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        let s = 1.0 - tau;
        let s2 = self.sigma0 * self.sigma0;
        let (post, _) = self.mixture.posterior_affine(u, tau, s2 * s * s)?;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (p, c) in post.iter().zip(self.mixture.components()) {
            if *p == 0.0 {
                continue;
            }
            let r: Vec<f64> = u.iter().zip(c.mean()).map(|(x, m)| x - tau * m).collect();
            let mut y = c.rotate_in(&r);
            for (yi, &l) in y.iter_mut().zip(c.eigenvalues()) {
                let den = tau * tau * l + s2 * s * s;
                if !(den > 0.0) {
                    return Err(ReflowError::DegenerateLaw { tau });
                }
                *yi *= (tau * l - s2 * s) / den;
            }
            let corr = c.rotate_out(&y);
            for ((o, m), k) in out.iter_mut().zip(c.mean()).zip(corr.iter()) {
                *o += p * (m + k);
            }
        }
        Ok(())
    }
}

/// Number of sinusoidal τ frequencies `2^j π`, `j = 0..7`.
pub const EMBED_FREQS: usize = 8;
pub const EMBED_WIDTH: usize = 2 * EMBED_FREQS;

/// `[sin(2^j πτ), cos(2^j πτ)]` for `j = 0..8`.
pub fn time_embedding(tau: f64, out: &mut [f64]) {
    for j in 0..EMBED_FREQS {
        let w = (1u32 << j) as f64 * std::f64::consts::PI * tau;
        out[2 * j] = w.sin();
        out[2 * j + 1] = w.cos();
    }
}

/// Dense tanh network on `[u, c, embed(τ)]` with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    state_dim: usize,
    cond_dim: usize,
    widths: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn new(state_dim: usize, cond_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        if state_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(invalid("layer widths must be positive"));
        }
        let mut widths = vec![state_dim + cond_dim + EMBED_WIDTH];
        widths.extend_from_slice(hidden);
        widths.push(state_dim);
        let mut params = Vec::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let s = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| s * rng.normal()));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self {
            state_dim,
            cond_dim,
            widths,
            params,
        })
    }

    pub fn from_parts(state_dim: usize, cond_dim: usize, widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if widths.len() < 2
            || widths[0] != state_dim + cond_dim + EMBED_WIDTH
            || *widths.last().unwrap() != state_dim
        {
            return Err(invalid(format!("inconsistent layer widths {widths:?}")));
        }
        let n: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        ensure_len(n, params.len())?;
        if let Some(index) = params.iter().position(|x| !x.is_finite()) {
            return Err(ReflowError::NonFinite { index });
        }
        Ok(Self {
            state_dim,
            cond_dim,
            widths,
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn input(&self, u: &[f64], cond: &[f64], tau: f64) -> Result<Vec<f64>> {
        ensure_len(self.state_dim, u.len())?;
        ensure_len(self.cond_dim, cond.len())?;
        let mut x = Vec::with_capacity(self.widths[0]);
        x.extend_from_slice(u);
        x.extend_from_slice(cond);
        let k = x.len();
        x.resize(k + EMBED_WIDTH, 0.0);
        time_embedding(tau, &mut x[k..]);
        Ok(x)
    }

    /// Activations of every layer, input first, output last.
    fn forward_cache(&self, x: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = vec![x];
        let mut off = 0;
        let last = self.widths.len() - 2;
        for l in 0..=last {
            let (ni, no) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[off..off + ni * no];
            let b = &self.params[off + ni * no..off + ni * no + no];
            let a = acts.last().unwrap();
            let z: Vec<f64> = (0..no)
                .map(|o| {
                    let row = &w[o * ni..(o + 1) * ni];
                    b[o] + row.iter().zip(a).map(|(p, q)| p * q).sum::<f64>()
                })
                .collect();
            acts.push(if l < last { z.into_iter().map(f64::tanh).collect() } else { z });
            off += ni * no + no;
        }
        acts
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output`.
    fn backward(&self, acts: &[Vec<f64>], grad_out: &[f64], grad: &mut [f64]) {
        let nl = self.widths.len() - 1;
        let mut offsets = Vec::with_capacity(nl);
        let mut off = 0;
        for l in 0..nl {
            offsets.push(off);
            off += self.widths[l] * self.widths[l + 1] + self.widths[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..nl).rev() {
            let (ni, no) = (self.widths[l], self.widths[l + 1]);
            if l < nl - 1 {
                for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let off = offsets[l];
            let a = &acts[l];
            for o in 0..no {
                let g = &mut grad[off + o * ni..off + (o + 1) * ni];
                for (gi, ai) in g.iter_mut().zip(a) {
                    *gi += delta[o] * ai;
                }
                grad[off + ni * no + o] += delta[o];
            }
            if l > 0 {
                let w = &self.params[off..off + ni * no];
                let mut prev = vec![0.0; ni];
                for o in 0..no {
                    for (p, wi) in prev.iter_mut().zip(&w[o * ni..(o + 1) * ni]) {
                        *p += delta[o] * wi;
                    }
                }
                delta = prev;
            }
        }
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = vec![self.state_dim as u32, self.cond_dim as u32, EMBED_FREQS as u32];
        meta.extend(self.widths.iter().map(|&w| w as u32));
        Checkpoint {
            kind: KIND_MLP,
            meta,
            weights: self.params.clone(),
        }
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.len() < 5 || ck.meta[2] as usize != EMBED_FREQS {
            return Err(ReflowError::CorruptHeader("bad mlp checkpoint metadata".into()));
        }
        let widths = ck.meta[3..].iter().map(|&w| w as usize).collect();
        Self::from_parts(ck.meta[0] as usize, ck.meta[1] as usize, widths, ck.weights.clone())
    }
}

impl VelocityField for Mlp {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn eval(&self, u: &[f64], cond: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        let acts = self.forward_cache(self.input(u, cond, tau)?);
        out.copy_from_slice(acts.last().unwrap());
        Ok(())
    }
}

const KIND_MLP: u32 = 1;
const KIND_BARYCENTRIC: u32 = 2;
const KIND_CONDITIONAL: u32 = 3;
const KIND_MIXTURE: u32 = 4;

fn meta2(ck: &Checkpoint) -> Result<(usize, usize)> {
    match ck.meta.as_slice() {
        [a, b, ..] => Ok((*a as usize, *b as usize)),
        _ => Err(ReflowError::CorruptHeader("checkpoint metadata too short".into())),
    }
}

/// Every velocity the toolkit can checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityModel {
    Mlp(Mlp),
    Barycentric(GaussianTransportProblem),
    ConditionalGaussian(ConditionalGaussianVelocity),
    Mixture(MixtureVelocity),
}

impl VelocityModel {
    fn inner(&self) -> &dyn VelocityField {
        match self {
            VelocityModel::Mlp(m) => m,
            VelocityModel::Barycentric(p) => p,
            VelocityModel::ConditionalGaussian(c) => c,
            VelocityModel::Mixture(m) => m,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            VelocityModel::Mlp(_) => "mlp",
            VelocityModel::Barycentric(_) => "analytic-gaussian",
            VelocityModel::ConditionalGaussian(_) => "conditional-gaussian",
            VelocityModel::Mixture(_) => "gaussian-mixture",
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            VelocityModel::Mlp(m) => m.to_checkpoint(),
            VelocityModel::Barycentric(p) => Checkpoint {
                kind: KIND_BARYCENTRIC,
                meta: vec![
                    p.dim() as u32,
                    match p.kind {
                        CouplingKind::Independent => 0,
                        CouplingKind::Comonotone => 1,
                    },
                ],
                weights: p.to_weights(),
            },
            VelocityModel::ConditionalGaussian(c) => c.to_checkpoint(),
            VelocityModel::Mixture(m) => {
                let spec = m.mixture.to_spec();
                let k = spec.weights.len();
                let d = m.mixture.dim();
                let mut w = spec.weights.clone();
                spec.means.iter().for_each(|x| w.extend_from_slice(x));
                spec.covs.iter().for_each(|x| w.extend_from_slice(x));
                w.push(m.sigma0);
                Checkpoint {
                    kind: KIND_MIXTURE,
                    meta: vec![k as u32, d as u32],
                    weights: w,
                }
            }
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.kind {
            KIND_MLP => Ok(VelocityModel::Mlp(Mlp::from_checkpoint(ck)?)),
            KIND_BARYCENTRIC => {
                let (d, k) = meta2(ck)?;
                let kind = match k {
                    0 => CouplingKind::Independent,
                    1 => CouplingKind::Comonotone,
                    _ => return Err(ReflowError::CorruptHeader(format!("coupling tag {k}"))),
                };
                Ok(VelocityModel::Barycentric(GaussianTransportProblem::from_weights(
                    d,
                    kind,
                    &ck.weights,
                )?))
            }
            KIND_CONDITIONAL => Ok(VelocityModel::ConditionalGaussian(
                ConditionalGaussianVelocity::from_checkpoint(ck)?,
            )),
            KIND_MIXTURE => {
                let (k, d) = meta2(ck)?;
                ensure_len(k + k * d + k * d * d + 1, ck.weights.len())?;
                let w = &ck.weights;
                let spec = crate::gaussian::MixtureSpec {
                    weights: w[..k].to_vec(),
                    means: (0..k).map(|i| w[k + i * d..k + (i + 1) * d].to_vec()).collect(),
                    covs: (0..k)
                        .map(|i| {
                            let o = k + k * d + i * d * d;
                            w[o..o + d * d].to_vec()
                        })
                        .collect(),
                };
                Ok(VelocityModel::Mixture(MixtureVelocity::new(
                    GaussianMixture::from_spec(&spec)?,
                    w[w.len() - 1],
                )?))
            }
            k => Err(ReflowError::CorruptHeader(format!("unknown model kind {k}"))),
        }
    }
}

impl VelocityField for VelocityModel {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn cond_dim(&self) -> usize {
        self.inner().cond_dim()
    }

    fn eval(&self, u: &[f64], cond: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.inner().eval(u, cond, tau, out)
    }
}

/// Where the interpolant starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// Fresh Gaussian noise ξ; the model is conditioned on the pair's condition,
    /// or on `u0` when the coupling carries none.
    Noise,
    /// The coupled input `u0` itself (plain chord transport, σ0 = 1).
    Chord,
}

/// Regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// `u1 − σ0·s`, the time derivative of the interpolant from source `s`.
    Velocity,
    /// `u1 − u0` regardless of the source (ablation).
    Displacement,
}

/// One regression example after sampling τ and the source.
#[derive(Debug, Clone, PartialEq)]
pub struct RfExample {
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub cond: Vec<f64>,
    pub tau: f64,
    /// ξ for [`Source::Noise`]; ignored for [`Source::Chord`].
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sigma0: f64,
    pub source: Source,
    pub target: Target,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            source: Source::Noise,
            target: Target::Velocity,
        }
    }
}

impl Objective {
    fn source_of<'a>(&self, ex: &'a RfExample) -> (&'a [f64], f64) {
        match self.source {
            Source::Noise => (&ex.noise, self.sigma0),
            Source::Chord => (&ex.u0, 1.0),
        }
    }

    /// `u_τ = τ u1 + σ(1−τ) s` with `σ(r) = σ0 r`.
    pub fn interpolant(&self, ex: &RfExample) -> Vec<f64> {
        let (s, sigma) = self.source_of(ex);
        ex.u1
            .iter()
            .zip(s)
            .map(|(a, b)| ex.tau * a + sigma * (1.0 - ex.tau) * b)
            .collect()
    }

    /// Regression target; independent of τ.
    pub fn target(&self, ex: &RfExample) -> Vec<f64> {
        match self.target {
            Target::Velocity => {
                let (s, sigma) = self.source_of(ex);
                ex.u1.iter().zip(s).map(|(a, b)| a - sigma * b).collect()
            }
            Target::Displacement => ex.u1.iter().zip(&ex.u0).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Mean over the batch of `‖target − v(u_τ, c, τ)‖²` (Euclidean).
pub fn rf_loss(model: &dyn VelocityField, batch: &[RfExample], obj: &Objective) -> Result<f64> {
    if batch.is_empty() {
        return Err(ReflowError::EmptyInput("rf_loss batch"));
    }
    let mut out = vec![0.0; model.state_dim()];
    let mut total = 0.0;
    for ex in batch {
        let x = obj.interpolant(ex);
        model.eval(&x, &ex.cond, ex.tau, &mut out)?;
        total += obj
            .target(ex)
            .iter()
            .zip(&out)
            .map(|(t, v)| (t - v).powi(2))
            .sum::<f64>();
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(ReflowError::TrainingDivergence {
            iteration: 0,
            loss,
        });
    }
    Ok(loss)
}

/// Loss and exact gradient with respect to the network parameters.
pub fn rf_loss_and_grad(model: &Mlp, batch: &[RfExample], obj: &Objective) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(ReflowError::EmptyInput("rf_loss batch"));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut total = 0.0;
    for ex in batch {
        let acts = model.forward_cache(model.input(&obj.interpolant(ex), &ex.cond, ex.tau)?);
        let out = acts.last().unwrap();
        let t = obj.target(ex);
        let mut g = vec![0.0; out.len()];
        for ((gi, o), ti) in g.iter_mut().zip(out).zip(&t) {
            let r = o - ti;
            total += r * r;
            *gi = 2.0 * r / n;
        }
        model.backward(&acts, &g, &mut grad);
    }
    Ok((total / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    /// Adam with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8` and bias correction.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub objective: Objective,
    pub seed: u64,
    /// Exponential moving average of the weights; the averaged weights are returned.
    pub ema_decay: Option<f64>,
    /// Loss history stride.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            iterations: 2000,
            learning_rate: 3e-4,
            optimizer: Optimizer::Adam,
            objective: Objective::default(),
            seed: 0,
            ema_decay: None,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(invalid("iterations, batch_size and log_every must be positive"));
        }
        if !(0.0..1.0).contains(&self.learning_rate) {
            return Err(invalid("learning rate must lie in [0, 1)"));
        }
        if !(self.objective.sigma0 > 0.0) {
            return Err(invalid("sigma0 must be positive"));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(invalid("ema decay must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Draws a regression batch from the coupling: uniform pair index, uniform τ, fresh ξ.
pub fn draw_batch(data: &Coupling, size: usize, obj: &Objective, rng: &mut Rng) -> Vec<RfExample> {
    (0..size)
        .map(|_| {
            let i = rng.below(data.len());
            let tau = rng.uniform();
            let noise = rng.normal_vec(data.u1[i].len());
            let cond = match (&data.cond, obj.source) {
                (Some(c), _) => c[i].clone(),
                (None, Source::Noise) => data.u0[i].clone(),
                (None, Source::Chord) => Vec::new(),
            };
            RfExample {
                u0: data.u0[i].clone(),
                u1: data.u1[i].clone(),
                cond,
                tau,
                noise,
            }
        })
        .collect()
}

/// Minibatch training of an MLP velocity; returns the loss history (CSV-ready).
pub fn train(model: &mut Mlp, data: &Coupling, cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = Rng::new(cfg.seed);
    let np = model.num_params();
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let mut ema = cfg.ema_decay.map(|_| model.params.clone());
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut history = Vec::new();
    for it in 1..=cfg.iterations {
        let batch = draw_batch(data, cfg.batch_size, &cfg.objective, &mut rng);
        let (loss, grad) = rf_loss_and_grad(model, &batch, &cfg.objective)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(ReflowError::TrainingDivergence { iteration: it, loss });
        }
        let lr = cfg.learning_rate;
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - b1.powi(it as i32);
                let c2 = 1.0 - b2.powi(it as i32);
                for i in 0..np {
                    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                    model.params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
        if let (Some(e), Some(d)) = (ema.as_mut(), cfg.ema_decay) {
            for (a, p) in e.iter_mut().zip(&model.params) {
                *a = d * *a + (1.0 - d) * p;
            }
        }
        if it % cfg.log_every == 0 || it == 1 || it == cfg.iterations {
            history.push(LossRecord {
                iteration: it,
                loss,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    if let Some(e) = ema {
        model.params = e;
    }
    Ok(history)
}

/// Loss history as CSV `iteration,loss,wall_ms`.
pub fn history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("iteration,loss,wall_ms\n");
    for r in history {
        s.push_str(&format!("{},{:.10e},{:.3}\n", r.iteration, r.loss, r.wall_ms));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use std::sync::Arc;

    #[test]
    fn scalar_eval_matches_matrix_route() {
        let mut rng = Rng::new(12);
        for kind in [CouplingKind::Independent, CouplingKind::Comonotone] {
            for _ in 0..50 {
                let p = GaussianTransportProblem::scalar(
                    rng.normal(),
                    rng.uniform_range(0.2, 3.0),
                    rng.normal(),
                    rng.uniform_range(0.2, 3.0),
                    kind,
                )
                .unwrap();
                let (u, tau) = (rng.normal() * 2.0, rng.uniform());
                let mut out = [0.0];
                p.eval(&[u], &[], tau, &mut out).unwrap();
                let slow = p.barycentric_velocity(&[u], tau).unwrap()[0];
                assert!((out[0] - slow).abs() <= 1e-12 * (1.0 + slow.abs()));
            }
        }
    }

    #[test]
    fn chord_endpoints_and_identity() {
        let g = Arc::new(Grid::torus_1d(8).unwrap());
        let mut rng = Rng::new(1);
        let a = crate::field::gaussian_field(g.clone(), &mut rng);
        let b = crate::field::gaussian_field(g.clone(), &mut rng);
        assert_eq!(chord_point(&a, &b, 0.0).unwrap(), a);
        assert_eq!(chord_point(&a, &b, 1.0).unwrap(), b);
        assert!(chord_point(&a, &b, 1.5).is_err());
        let c = Field::constant(g.clone(), 3.0);
        let mid = chord_point(&Field::zeros(g), &c, 0.5).unwrap();
        assert!(mid.values().iter().all(|&x| x == 1.5));
    }

    #[test]
    fn identity_coupling_has_zero_velocity() {
        let p = GaussianTransportProblem::new(
            vec![0.5, -1.0],
            &[1.0, 0.3, 0.3, 2.0],
            vec![0.5, -1.0],
            &[1.0, 0.3, 0.3, 2.0],
            CouplingKind::Comonotone,
        )
        .unwrap();
        for tau in [0.0, 0.3, 1.0] {
            let v = p.barycentric_velocity(&[1.0, 2.0], tau).unwrap();
            assert!(v.iter().all(|x| x.abs() < 1e-12), "{v:?}");
        }
    }

    #[test]
    fn independent_start_velocity() {
        let p = GaussianTransportProblem::scalar(0.0, 1.0, 2.5, 1.0, CouplingKind::Independent).unwrap();
        let v = p.barycentric_velocity(&[0.7], 0.0).unwrap();
        assert!((v[0] - (2.5 - 0.7)).abs() < 1e-12);
    }

    #[test]
    fn comonotone_map_pushes_covariance() {
        let p = GaussianTransportProblem::new(
            vec![0.0, 0.0],
            &[2.0, 0.5, 0.5, 1.0],
            vec![1.0, 1.0],
            &[1.0, -0.2, -0.2, 0.5],
            CouplingKind::Comonotone,
        )
        .unwrap();
        let (_, c1) = p.interpolant_law(1.0);
        for (a, b) in c1.iter().zip(p.cov1()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_velocity_at_start_is_mean_minus_state() {
        let v = ConditionalGaussianVelocity::new(vec![1.0], &[0.5], vec![0.0], &[0.25], 1.0).unwrap();
        let mut out = [0.0];
        v.eval(&[0.3], &[2.0], 0.0, &mut out).unwrap();
        assert!((out[0] - (2.0 - 0.3)).abs() < 1e-12);
    }

    fn scalar_velocity_check(v: &dyn VelocityField, m: f64, s2: f64, u: f64, tau: f64) {
        // scalar closed form of E[U1 − ξ | τU1 + (1−τ)ξ = u]
        let var = tau * tau * s2 + (1.0 - tau).powi(2);
        let want = m + (tau * s2 - (1.0 - tau)) / var * (u - tau * m);
        let mut out = [0.0];
        v.eval(&[u], &[], tau, &mut out).unwrap();
        assert!((out[0] - want).abs() < 1e-12, "{} vs {want}", out[0]);
    }

    #[test]
    fn mixture_velocity_single_component_matches_scalar() {
        let mix = GaussianMixture::new(vec![1.0], vec![Gaussian::isotropic(vec![1.5], 0.3).unwrap()]).unwrap();
        let v = MixtureVelocity::new(mix, 1.0).unwrap();
        for tau in [0.0, 0.2, 0.7, 0.99] {
            scalar_velocity_check(&v, 1.5, 0.3, 0.4, tau);
        }
    }

    #[test]
    fn checkpoint_roundtrip_all_kinds() {
        let mut rng = Rng::new(2);
        let models = vec![
            VelocityModel::Mlp(Mlp::new(3, 2, &[5, 4], &mut rng).unwrap()),
            VelocityModel::Barycentric(
                GaussianTransportProblem::scalar(0.0, 1.0, 2.0, 0.5, CouplingKind::Comonotone).unwrap(),
            ),
            VelocityModel::ConditionalGaussian(
                ConditionalGaussianVelocity::new(vec![1.0, 0.0], &[0.5, 0.1], vec![0.2], &[1.0, 0.1, 0.1, 0.4], 1.0)
                    .unwrap(),
            ),
            VelocityModel::Mixture(
                MixtureVelocity::new(
                    GaussianMixture::new(
                        vec![0.4, 0.6],
                        vec![
                            Gaussian::isotropic(vec![-1.0], 0.1).unwrap(),
                            Gaussian::isotropic(vec![1.0], 0.2).unwrap(),
                        ],
                    )
                    .unwrap(),
                    1.0,
                )
                .unwrap(),
            ),
        ];
        for m in models {
            let ck = m.to_checkpoint();
            let bytes = crate::io::encode_checkpoint(&ck).unwrap();
            let back = VelocityModel::from_checkpoint(&crate::io::decode_checkpoint(&bytes).unwrap()).unwrap();
            let d = m.state_dim();
            let c = m.cond_dim();
            let mut r = Rng::new(4);
            for _ in 0..10 {
                let u = r.normal_vec(d);
                let cond = r.normal_vec(c);
                let tau = r.uniform();
                let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
                m.eval(&u, &cond, tau, &mut a).unwrap();
                back.eval(&u, &cond, tau, &mut b).unwrap();
                let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&a), bits(&b), "{}", m.kind_name());
            }
        }
    }

    #[test]
    fn loss_zero_and_offset() {
        // model ≡ target for a zero-displacement chord batch: v = 0, target = 0
        let zero = FnVelocity::new(2, |_, _, out: &mut [f64]| out.fill(0.0));
        let obj = Objective {
            sigma0: 1.0,
            source: Source::Chord,
            target: Target::Displacement,
        };
        let ex = |u: Vec<f64>| RfExample {
            u0: u.clone(),
            u1: u,
            cond: vec![],
            tau: 0.4,
            noise: vec![0.0, 0.0],
        };
        let batch = vec![ex(vec![1.0, 2.0]), ex(vec![-1.0, 0.5])];
        assert_eq!(rf_loss(&zero, &batch, &obj).unwrap(), 0.0);
        let off = FnVelocity::new(2, |_, _, out: &mut [f64]| out.copy_from_slice(&[0.3, -0.4]));
        assert!((rf_loss(&off, &batch, &obj).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn target_ignores_tau() {
        let obj = Objective::default();
        let mut ex = RfExample {
            u0: vec![1.0],
            u1: vec![2.0],
            cond: vec![],
            tau: 0.1,
            noise: vec![0.5],
        };
        let t1 = obj.target(&ex);
        ex.tau = 0.9;
        assert_eq!(obj.target(&ex), t1);
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let mut rng = Rng::new(3);
        let p = GaussianTransportProblem::scalar(0.0, 1.0, 1.0, 0.5, CouplingKind::Independent).unwrap();
        let data = p.coupling(64, &mut rng).unwrap();
        let mut model = Mlp::new(1, 0, &[8], &mut rng).unwrap();
        let before = model.params().to_vec();
        let cfg = TrainConfig {
            iterations: 20,
            learning_rate: 0.0,
            batch_size: 8,
            objective: Objective {
                source: Source::Chord,
                ..Objective::default()
            },
            ..TrainConfig::default()
        };
        train(&mut model, &data, &cfg).unwrap();
        let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&before), bits(model.params()));
    }

    #[test]
    fn history_csv_header() {
        let h = vec![LossRecord {
            iteration: 1,
            loss: 0.5,
            wall_ms: 1.0,
        }];
        assert!(history_csv(&h).starts_with("iteration,loss,wall_ms\n1,"));
    }
}
