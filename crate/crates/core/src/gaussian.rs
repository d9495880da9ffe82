//! Multivariate normals held in eigen form `Σ = Q diag(λ) Qᵀ`, and Gaussian mixtures.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure_len, invalid, Result};
use crate::rng::Rng;

const LN_TAU: f64 = 1.837_877_066_409_345_5;

pub(crate) fn mat(data: &[f64], n: usize) -> Result<DMatrix<f64>> {
    ensure_len(n * n, data.len())?;
    Ok(DMatrix::from_row_slice(n, n, data))
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Symmetric eigendecomposition; rejects asymmetric or indefinite input
/// (eigenvalues below `-1e-10 · max|λ|`), clamping tiny negatives to zero.
pub(crate) fn psd_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(invalid("covariance is not symmetric"));
    }
    let e = SymmetricEigen::new(m.clone());
    let top = e.eigenvalues.amax();
    if e.eigenvalues.iter().any(|&l| l < -1e-10 * top.max(f64::MIN_POSITIVE)) {
        return Err(invalid("covariance is not positive semidefinite"));
    }
    Ok((e.eigenvectors, e.eigenvalues.map(|l| l.max(0.0))))
}

/// Principal square root of a PSD matrix.
pub(crate) fn sqrtm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, l) = psd_eigen(m)?;
    Ok(&q * DMatrix::from_diagonal(&l.map(f64::sqrt)) * q.transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    q: DMatrix<f64>,
    lambda: DVector<f64>,
    /// Covariance as supplied, so serialization round-trips bit-exactly.
    cov: Vec<f64>,
}

impl Gaussian {
    /// `cov` is row-major `d × d`, positive semidefinite.
    pub fn new(mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(invalid("Gaussian needs dimension >= 1"));
        }
        let (q, lambda) = psd_eigen(&mat(cov, d)?)?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            q,
            lambda,
            cov: cov.to_vec(),
        })
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        if !(var >= 0.0) {
            return Err(invalid("variance must be nonnegative"));
        }
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        (0..d).for_each(|i| cov[i * d + i] = var);
        Self::new(mean, &cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.lambda.as_slice()
    }

    pub fn cov(&self) -> Vec<f64> {
        self.cov.clone()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |i, _| self.lambda[i].sqrt() * rng.normal());
        (&self.mean + &self.q * z).as_slice().to_vec()
    }

    /// Coordinates of `x` in the eigenbasis: `Qᵀ x`.
    pub(crate) fn rotate_in(&self, x: &[f64]) -> DVector<f64> {
        self.q.tr_mul(&DVector::from_column_slice(x))
    }

    pub(crate) fn rotate_out(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.q * y
    }

    /// Log-density of `N(a·mean, a²Σ + b·I)` at `x` together with its gradient in `x`.
    pub fn log_density_affine(&self, x: &[f64], a: f64, b: f64) -> Result<(f64, Vec<f64>)> {
        ensure_len(self.dim(), x.len())?;
        let r = self.rotate_in(x) - self.q.tr_mul(&(&self.mean * a));
        let mut quad = 0.0;
        let mut logdet = 0.0;
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.dim() {
            let v = a * a * self.lambda[i] + b;
            if !(v > 0.0) {
                return Err(invalid("degenerate Gaussian density (zero variance direction)"));
            }
            quad += r[i] * r[i] / v;
            logdet += v.ln();
            g[i] = -r[i] / v;
        }
        let lp = -0.5 * (quad + logdet + self.dim() as f64 * LN_TAU);
        Ok((lp, self.rotate_out(&g).as_slice().to_vec()))
    }
}

/// Finite mixture `Σ w_k N(μ_k, Σ_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

/// Serializable description of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major covariance per component.
    pub covs: Vec<Vec<f64>>,
}

impl GaussianMixture {
    /// Weights must be nonnegative and sum to one within 1e-9.
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(invalid("mixture needs one weight per component"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights {weights:?} must be >= 0 and sum to 1")));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(invalid("mixture components disagree on dimension"));
        }
        Ok(Self { weights, components })
    }

    pub fn from_spec(spec: &MixtureSpec) -> Result<Self> {
        if spec.means.len() != spec.covs.len() {
            return Err(invalid("mixture spec needs one covariance per mean"));
        }
        let comps = spec
            .means
            .iter()
            .zip(&spec.covs)
            .map(|(m, c)| Gaussian::new(m.clone(), c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.weights.clone(), comps)
    }

    pub fn to_spec(&self) -> MixtureSpec {
        MixtureSpec {
            weights: self.weights.clone(),
            means: self.components.iter().map(|c| c.mean().to_vec()).collect(),
            covs: self.components.iter().map(Gaussian::cov).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.components[k].sample(rng)
    }

    /// Posterior component weights `π_k(x)` of `Σ w_k N(a μ_k, a²Σ_k + b I)` and each
    /// component's log-density gradient at `x`.
    pub(crate) fn posterior_affine(&self, x: &[f64], a: f64, b: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut logs = Vec::with_capacity(self.weights.len());
        let mut grads = Vec::with_capacity(self.weights.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            let (lp, g) = c.log_density_affine(x, a, b)?;
            logs.push(if *w > 0.0 { w.ln() + lp } else { f64::NEG_INFINITY });
            grads.push(g);
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut post: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = post.iter().sum();
        post.iter_mut().for_each(|p| *p /= z);
        Ok((post, grads))
    }

    /// `log p_σ(x)` for the mixture convolved with `N(0, σ²I)`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        let mut logs = Vec::with_capacity(self.weights.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            logs.push(w.ln() + c.log_density_affine(x, 1.0, sigma * sigma)?.0);
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln())
    }

    /// Score `∇ log p_σ(x)` of the mixture convolved with `N(0, σ²I)`.
    pub fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let (post, grads) = self.posterior_affine(x, 1.0, sigma * sigma)?;
        let mut out = vec![0.0; x.len()];
        for (p, g) in post.iter().zip(&grads) {
            out.iter_mut().zip(g).for_each(|(o, gi)| *o += p * gi);
        }
        Ok(out)
    }

    /// CDF of a one-dimensional mixture.
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(invalid("cdf_1d needs a one-dimensional mixture"));
        }
        let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
        Ok(self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| {
                let sd = c.cov()[0].sqrt();
                let z = x - c.mean()[0];
                w * if sd > 0.0 {
                    std_normal.cdf(z / sd)
                } else if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .sum())
    }

    /// Mean of the mixture.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, c) in self.weights.iter().zip(&self.components) {
            m.iter_mut().zip(c.mean()).for_each(|(a, b)| *a += w * b);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        assert!(Gaussian::new(vec![0.0, 0.0], &[1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(Gaussian::new(vec![0.0, 0.0], &[1.0, 0.5, 0.0, 1.0]).is_err());
        assert!(Gaussian::new(vec![0.0, 0.0], &[2.0, 0.5, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn log_density_matches_1d_formula() {
        let g = Gaussian::isotropic(vec![1.5], 4.0).unwrap();
        let (lp, grad) = g.log_density_affine(&[0.5], 1.0, 0.0).unwrap();
        let want = -0.5 * (1.0 / 4.0 + 4f64.ln() + LN_TAU);
        assert!((lp - want).abs() < 1e-14);
        assert!((grad[0] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn mixture_score_matches_finite_difference() {
        let m = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![
                Gaussian::new(vec![-1.0, 0.5], &[0.5, 0.1, 0.1, 0.3]).unwrap(),
                Gaussian::isotropic(vec![2.0, -1.0], 0.8).unwrap(),
            ],
        )
        .unwrap();
        let x = [0.3, 0.2];
        let s = m.score(&x, 0.4).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (m.log_density(&xp, 0.4).unwrap() - m.log_density(&xm, 0.4).unwrap()) / (2.0 * h);
            assert!((fd - s[i]).abs() < 1e-7, "{fd} vs {}", s[i]);
        }
    }

    #[test]
    fn weights_must_sum_to_one() {
        let c = || Gaussian::isotropic(vec![0.0], 1.0).unwrap();
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![c(), c()]).is_err());
        assert!(GaussianMixture::new(vec![0.5], vec![c(), c()]).is_err());
    }

    #[test]
    fn sample_moments() {
        let g = Gaussian::new(vec![1.0, -2.0], &[2.0, 0.6, 0.6, 1.0]).unwrap();
        let mut rng = Rng::new(12);
        let n = 40_000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| g.sample(&mut rng)).collect();
        let m0 = xs.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        let c01 = xs.iter().map(|x| (x[0] - 1.0) * (x[1] + 2.0)).sum::<f64>() / n as f64;
        assert!((m0 - 1.0).abs() < 0.03);
        assert!((c01 - 0.6).abs() < 0.04);
    }
}
