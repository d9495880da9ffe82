//! Toy score-based diffusion: variance-exploding forward noising and reverse-time
//! Euler–Maruyama sampling, used as the step-count reference for the ODE sampler.
//!
//! Noise level `σ(s) = σ_min (σ_max/σ_min)^s` on `s ∈ [0, 1]`, diffusion coefficient
//! `g(s)² = dσ²/ds = 2σ(s)² ln(σ_max/σ_min)`. The reverse sampler starts from
//! `N(0, σ_max² I)` and, on a uniform grid `s_i = 1 − i/N`, applies
//! `x ← x + g(s_i)² ∇log p_{σ(s_i)}(x) h + g(s_i) √h z`; the last step omits the noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ReflowError};
use crate::gaussian::GaussianMixture;
use crate::rng::Rng;
use crate::transport::VelocityField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionSpec {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub steps: usize,
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        Self {
            sigma_min: 0.01,
            sigma_max: 10.0,
            steps: 256,
        }
    }
}

impl DiffusionSpec {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min) || self.steps == 0 {
            return Err(invalid("diffusion: need 0 < sigma_min < sigma_max and steps >= 1"));
        }
        Ok(())
    }

    pub fn sigma(&self, s: f64) -> f64 {
        self.sigma_min * (self.sigma_max / self.sigma_min).powf(s)
    }

    pub fn g2(&self, s: f64) -> f64 {
        2.0 * self.sigma(s).powi(2) * (self.sigma_max / self.sigma_min).ln()
    }
}

/// Score of the noised target at level σ.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;
    fn score(&self, x: &[f64], sigma: f64, out: &mut [f64]) -> Result<()>;
}

impl ScoreModel for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }

    fn score(&self, x: &[f64], sigma: f64, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&GaussianMixture::score(self, x, sigma)?);
        Ok(())
    }
}

/// A regressor trained to predict the score, evaluated with `τ = σ` as its time input.
pub struct LearnedScore<'a>(pub &'a dyn VelocityField);

impl ScoreModel for LearnedScore<'_> {
    fn dim(&self) -> usize {
        self.0.state_dim()
    }

    fn score(&self, x: &[f64], sigma: f64, out: &mut [f64]) -> Result<()> {
        self.0.eval(x, &[], sigma, out)
    }
}

/// One reverse-time path; returns the endpoint and, if `record`, every intermediate state.
pub fn reverse_sde_path(
    spec: &DiffusionSpec,
    score: &dyn ScoreModel,
    rng: &mut Rng,
    record: bool,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    spec.validate()?;
    let d = score.dim();
    let mut x: Vec<f64> = rng.normal_vec(d).into_iter().map(|z| spec.sigma_max * z).collect();
    let mut states = if record { vec![x.clone()] } else { Vec::new() };
    let h = 1.0 / spec.steps as f64;
    let mut sc = vec![0.0; d];
    for i in 0..spec.steps {
        let s = 1.0 - i as f64 * h;
        score.score(&x, spec.sigma(s), &mut sc)?;
        let g2 = spec.g2(s);
        let last = i + 1 == spec.steps;
        for j in 0..d {
            x[j] += g2 * sc[j] * h;
            if !last {
                x[j] += (g2 * h).sqrt() * rng.normal();
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ReflowError::BlowUp { tau: s - h });
        }
        if record {
            states.push(x.clone());
        }
    }
    Ok((x, states))
}

/// `n` independent samples (member `i` uses `rng.fork(i)`); NFE per sample is `steps`.
pub fn reverse_sde_sample(spec: &DiffusionSpec, score: &dyn ScoreModel, n: usize, rng: &Rng) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .into_par_iter()
        .map(|i| reverse_sde_path(spec, score, &mut rng.fork(i as u64), false).map(|r| r.0))
        .collect()
}
