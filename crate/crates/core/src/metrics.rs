//! Ensemble and law-level error metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result, ReflowError};
use crate::field::{Ensemble, Field};
use crate::rng::Rng;

/// Quantile-grid resolution for W₁ between samples of unequal size.
pub const QUANTILE_GRID: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStdErrors {
    /// Per channel `‖μ_ref − μ_model‖₂ / ‖μ_ref‖₂`.
    pub e_mu: Vec<f64>,
    /// Per channel `‖σ_ref − σ_model‖₂ / ‖σ_ref‖₂`.
    pub e_sigma: Vec<f64>,
    /// False where the reference norm vanished and the raw difference is reported.
    pub e_mu_normalized: Vec<bool>,
    pub e_sigma_normalized: Vec<bool>,
}

fn channel_diff_norms(a: &Field, b: &Field) -> Vec<(f64, f64)> {
    let m = a.grid().channels();
    let w = a.grid().cell_volume();
    let mut acc = vec![(0.0, 0.0); m];
    for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        acc[i % m].0 += (x - y) * (x - y);
        acc[i % m].1 += y * y;
    }
    acc.into_iter()
        .map(|(d, r)| ((w * d).sqrt(), (w * r).sqrt()))
        .collect()
}

fn normalize(pairs: Vec<(f64, f64)>) -> (Vec<f64>, Vec<bool>) {
    pairs
        .into_iter()
        .map(|(d, r)| if r > 0.0 { (d / r, true) } else { (d, false) })
        .unzip()
}

/// Pointwise mean and (population) standard-deviation errors, per channel.
pub fn mean_std_errors(model: &Ensemble, reference: &Ensemble) -> Result<MeanStdErrors> {
    model.members()[0].same_grid(&reference.members()[0])?;
    let (e_mu, e_mu_normalized) = normalize(channel_diff_norms(&model.mean(), &reference.mean()));
    let (e_sigma, e_sigma_normalized) =
        normalize(channel_diff_norms(&model.std(), &reference.std()));
    Ok(MeanStdErrors {
        e_mu,
        e_sigma,
        e_mu_normalized,
        e_sigma_normalized,
    })
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Empirical inverse CDF at `q ∈ (0,1)`, linear between order statistics placed at
/// `(i + 1/2)/n`, constant beyond the extreme ones.
fn inverse_cdf(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let x = q * n as f64 - 0.5;
    if x <= 0.0 {
        return sorted[0];
    }
    if x >= (n - 1) as f64 {
        return sorted[n - 1];
    }
    let i = x.floor() as usize;
    let t = x - i as f64;
    sorted[i] * (1.0 - t) + sorted[i + 1] * t
}

fn quantile_distance(a: &[f64], b: &[f64], p: i32) -> f64 {
    let (sa, sb) = (sorted(a), sorted(b));
    if sa.len() == sb.len() {
        return sa.iter().zip(&sb).map(|(x, y)| (x - y).abs().powi(p)).sum::<f64>()
            / sa.len() as f64;
    }
    (0..QUANTILE_GRID)
        .map(|i| {
            let q = (i as f64 + 0.5) / QUANTILE_GRID as f64;
            (inverse_cdf(&sa, q) - inverse_cdf(&sb, q)).abs().powi(p)
        })
        .sum::<f64>()
        / QUANTILE_GRID as f64
}

/// `∫₀¹ |F_a⁻¹(q) − F_b⁻¹(q)| dq`. Exact for equal sample counts (sorted matching);
/// unequal counts use a midpoint rule on a common quantile grid.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(ReflowError::EmptyInput("w1_1d samples"));
    }
    Ok(quantile_distance(a, b, 1))
}

/// Empirical W₂ between 1D samples (same conventions as [`w1_1d`]).
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(ReflowError::EmptyInput("w2_1d samples"));
    }
    Ok(quantile_distance(a, b, 2).sqrt())
}

/// `∫ |F_n(x) − F(x)| dx` between the empirical CDF of `samples` and `cdf`, by the
/// midpoint rule with `cells` cells on `[lo, hi]` (mass outside is assumed negligible).
pub fn w1_to_cdf(samples: &[f64], cdf: impl Fn(f64) -> f64, lo: f64, hi: f64, cells: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(ReflowError::EmptyInput("w1_to_cdf samples"));
    }
    if !(hi > lo) || cells == 0 {
        return Err(invalid("w1_to_cdf needs lo < hi and cells >= 1"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let h = (hi - lo) / cells as f64;
    let mut below = s.partition_point(|&x| x < lo);
    let mut acc = 0.0;
    for i in 0..cells {
        let x = lo + (i as f64 + 0.5) * h;
        while below < s.len() && s[below] <= x {
            below += 1;
        }
        acc += (below as f64 / n - cdf(x)).abs();
    }
    Ok(acc * h)
}

/// W₂ between Gaussians `N(m1, s1²)` and `N(m2, s2²)`.
pub fn w2_gaussian_1d(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    ((m1 - m2).powi(2) + (s1 - s2).powi(2)).sqrt()
}

/// Exact W₂ between the empirical law of `samples` and `N(mean, std²)`:
/// each order statistic is matched to its quantile cell and the cell integrals of
/// `Φ⁻¹` and `(Φ⁻¹)²` are evaluated in closed form.
pub fn w2_empirical_gaussian(samples: &[f64], mean: f64, std: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(ReflowError::EmptyInput("w2_empirical_gaussian samples"));
    }
    if !(std > 0.0) {
        return Err(invalid("Gaussian std must be positive"));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let pdf = |z: f64| {
        if z.is_finite() {
            (-0.5 * z * z).exp() / (std::f64::consts::TAU).sqrt()
        } else {
            0.0
        }
    };
    let zphi = |z: f64| if z.is_finite() { z * pdf(z) } else { 0.0 };
    let s = sorted(samples);
    let n = s.len() as f64;
    let mut total = 0.0;
    let mut za = f64::NEG_INFINITY;
    for (i, &x) in s.iter().enumerate() {
        let q = (i + 1) as f64 / n;
        let zb = if i + 1 == s.len() {
            f64::INFINITY
        } else {
            std_normal.inverse_cdf(q)
        };
        let int_z = pdf(za) - pdf(zb);
        let int_z2 = 1.0 / n - (zphi(zb) - zphi(za));
        let d = x - mean;
        total += d * d / n - 2.0 * d * std * int_z + std * std * int_z2;
        za = zb;
    }
    Ok(total.max(0.0).sqrt())
}

/// Per-channel one-point W₁: W₁ between pointwise marginals averaged over grid points.
pub fn w1_onepoint(model: &Ensemble, reference: &Ensemble) -> Result<Vec<f64>> {
    model.members()[0].same_grid(&reference.members()[0])?;
    let grid = model.grid();
    let m = grid.channels();
    let per_entry: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| w1_1d(&model.column(i), &reference.column(i)))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; m];
    for (i, w) in per_entry.iter().enumerate() {
        out[i % m] += w;
    }
    let pts = grid.points() as f64;
    Ok(out.into_iter().map(|x| x / pts).collect())
}

/// `‖pred − truth‖₂ / ‖truth‖₂`; infinite for a zero truth unless `pred` is zero too.
pub fn rel_l2(pred: &Field, truth: &Field) -> Result<f64> {
    let diff = pred.sub(truth)?.l2_norm();
    let norm = truth.l2_norm();
    Ok(if norm > 0.0 {
        diff / norm
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    })
}

/// Minimum-cost perfect assignment for a square cost matrix (row-major, `n × n`).
/// Returns the total cost and `assignment[row] = column`.
pub fn assignment(cost: &[f64], n: usize) -> Result<(f64, Vec<usize>)> {
    crate::error::ensure_len(n * n, cost.len())?;
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    // Shortest augmenting path with row/column potentials, 1-based with a sentinel column 0.
    let a = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total, assign))
}

fn check_pair(a: &Ensemble, b: &Ensemble) -> Result<()> {
    a.members()[0].same_grid(&b.members()[0])?;
    if a.len() != b.len() {
        return Err(ReflowError::ShapeMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// Exact W₂ between two equal-size empirical field laws under the quadrature L² norm.
pub fn exact_w2_ensembles(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    let cost: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|ij| {
            let (x, y) = (&a.members()[ij / n], &b.members()[ij % n]);
            let d: f64 = x.values().iter().zip(y.values()).map(|(p, q)| (p - q).powi(2)).sum();
            d * x.grid().cell_volume()
        })
        .collect();
    let (total, _) = assignment(&cost, n)?;
    Ok((total.max(0.0) / n as f64).sqrt())
}

fn projections(e: &Ensemble, dir: &[f64]) -> Vec<f64> {
    e.iter()
        .map(|m| m.values().iter().zip(dir).map(|(x, d)| x * d).sum())
        .collect()
}

/// Sliced W₂: `sqrt(mean_θ W₂²(θ#a, θ#b))` over random unit directions, in quadrature
/// units. Each projection is 1-Lipschitz, so this never exceeds the true W₂.
pub fn sliced_w2(a: &Ensemble, b: &Ensemble, n_directions: usize, rng: &mut Rng) -> Result<f64> {
    a.members()[0].same_grid(&b.members()[0])?;
    if n_directions == 0 {
        return Err(invalid("sliced W2 needs at least one direction"));
    }
    let dim = a.grid().len();
    let dirs: Vec<Vec<f64>> = (0..n_directions).map(|_| rng.unit_vector(dim)).collect();
    let sq: Vec<f64> = dirs
        .par_iter()
        .map(|d| w2_1d(&projections(a, d), &projections(b, d)).map(|w| w * w))
        .collect::<Result<_>>()?;
    let mean = sq.iter().sum::<f64>() / n_directions as f64;
    Ok((mean * a.grid().cell_volume()).sqrt())
}

/// Sampler of conditional fields; returns the sample and the NFE it spent.
pub trait ConditionalSampler: Sync {
    fn sample(&self, condition: &Field, rng: &mut Rng) -> Result<(Field, usize)>;
}

/// One macro condition: per-micro conditions and the matching reference outputs.
#[derive(Debug, Clone)]
pub struct MacroProblem {
    pub conditions: Ensemble,
    pub reference: Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub errors: MeanStdErrors,
    pub w1_onepoint: Vec<f64>,
    /// Mean over micros of Rel-L² between index-paired model and reference samples.
    pub rel_l2: f64,
    pub avg_nfe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Per channel, mean over macros.
    pub e_mu: Vec<f64>,
    pub e_sigma: Vec<f64>,
    pub w1_onepoint: Vec<f64>,
    pub rel_l2: Stat,
    /// NFE per sample, averaged over every generated sample.
    pub nfe: f64,
    pub per_macro: Vec<MacroMetrics>,
}

impl MetricReport {
    /// `rel_l2.mean × nfe`, always derived from the stored fields.
    pub fn cost_times_err(&self) -> f64 {
        self.rel_l2.mean * self.nfe
    }

    /// JSON with the derived Cost×Err column included.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["cost_times_err"] = serde_json::json!(self.cost_times_err());
        v
    }
}

fn channel_mean(rows: impl Iterator<Item = Vec<f64>>, n: usize) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for r in rows {
        if acc.is_empty() {
            acc = vec![0.0; r.len()];
        }
        acc.iter_mut().zip(&r).for_each(|(a, x)| *a += x);
    }
    acc.into_iter().map(|a| a / n as f64).collect()
}

/// Macro–micro protocol: micro `j` of macro `i` is sampled from its own condition with
/// stream `rng.fork(i).fork(j)`, then compared to reference micro `j`.
pub fn macro_micro_eval(
    sampler: &dyn ConditionalSampler,
    problems: &[MacroProblem],
    rng: &Rng,
) -> Result<MetricReport> {
    if problems.is_empty() {
        return Err(ReflowError::EmptyInput("macro problems"));
    }
    let mut per_macro = Vec::with_capacity(problems.len());
    let mut nfe_total = 0usize;
    let mut count = 0usize;
    for (i, p) in problems.iter().enumerate() {
        if p.conditions.len() != p.reference.len() {
            return Err(ReflowError::ShapeMismatch {
                expected: p.reference.len(),
                found: p.conditions.len(),
            });
        }
        let macro_rng = rng.fork(i as u64);
        let samples: Vec<(Field, usize)> = p
            .conditions
            .members()
            .par_iter()
            .enumerate()
            .map(|(j, c)| sampler.sample(c, &mut macro_rng.fork(j as u64)))
            .collect::<Result<_>>()?;
        let mut rel = 0.0;
        let mut nfe = 0usize;
        for ((f, k), r) in samples.iter().zip(p.reference.iter()) {
            rel += rel_l2(f, r)?;
            nfe += k;
        }
        let n = samples.len();
        let model = Ensemble::new(samples.into_iter().map(|(f, _)| f).collect())?;
        per_macro.push(MacroMetrics {
            errors: mean_std_errors(&model, &p.reference)?,
            w1_onepoint: w1_onepoint(&model, &p.reference)?,
            rel_l2: rel / n as f64,
            avg_nfe: nfe as f64 / n as f64,
        });
        nfe_total += nfe;
        count += n;
    }
    let k = per_macro.len();
    let rels: Vec<f64> = per_macro.iter().map(|m| m.rel_l2).collect();
    Ok(MetricReport {
        e_mu: channel_mean(per_macro.iter().map(|m| m.errors.e_mu.clone()), k),
        e_sigma: channel_mean(per_macro.iter().map(|m| m.errors.e_sigma.clone()), k),
        w1_onepoint: channel_mean(per_macro.iter().map(|m| m.w1_onepoint.clone()), k),
        rel_l2: Stat::of(&rels),
        nfe: nfe_total as f64 / count as f64,
        per_macro,
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and eigenvectors as columns (row-major `n × n`).
pub fn jacobi_eigen(mat: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    crate::error::ensure_len(n * n, mat.len())?;
    let mut a = mat.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let vals = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (col, &i) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + col] = v[k * n + i];
        }
    }
    Ok((vals, vecs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StraightnessReport {
    pub path_lengths: Vec<f64>,
    pub chord_lengths: Vec<f64>,
    /// Path/chord per trajectory; infinite for closed paths.
    pub ratios: Vec<f64>,
    pub closed_paths: usize,
    /// Principal components actually used.
    pub ncomp: usize,
    /// Variance captured by each retained component.
    pub explained_variance: Vec<f64>,
}

impl StraightnessReport {
    pub fn mean_ratio(&self) -> f64 {
        self.ratios.iter().sum::<f64>() / self.ratios.len() as f64
    }

    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().cloned().fold(0.0, f64::max)
    }
}

/// PCA of all snapshots pooled across trajectories, then path/chord length of each
/// trajectory in the leading `ncomp` principal coordinates.
pub fn pca_straightness(trajectories: &[Vec<Vec<f64>>], ncomp: usize) -> Result<StraightnessReport> {
    if trajectories.is_empty() {
        return Err(ReflowError::EmptyInput("trajectories"));
    }
    if trajectories.iter().any(|t| t.len() < 2) {
        return Err(invalid("each trajectory needs at least two snapshots"));
    }
    let dim = trajectories[0][0].len();
    if trajectories.iter().flatten().any(|s| s.len() != dim) {
        return Err(ReflowError::ShapeMismatch {
            expected: dim,
            found: trajectories.iter().flatten().map(|s| s.len()).find(|&l| l != dim).unwrap(),
        });
    }
    let snaps: Vec<&Vec<f64>> = trajectories.iter().flatten().collect();
    let s = snaps.len();
    let mut mean = vec![0.0; dim];
    for x in &snaps {
        mean.iter_mut().zip(x.iter()).for_each(|(m, v)| *m += v / s as f64);
    }
    let centered: Vec<Vec<f64>> = snaps
        .iter()
        .map(|x| x.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // scores[i][c] of snapshot i on component c
    let (vals, scores): (Vec<f64>, Vec<Vec<f64>>) = if dim <= s {
        let mut cov = vec![0.0; dim * dim];
        for x in &centered {
            for i in 0..dim {
                for j in 0..dim {
                    cov[i * dim + j] += x[i] * x[j];
                }
            }
        }
        let (vals, vecs) = jacobi_eigen(&cov, dim)?;
        let scores = centered
            .iter()
            .map(|x| (0..dim).map(|c| (0..dim).map(|k| x[k] * vecs[k * dim + c]).sum()).collect())
            .collect();
        (vals, scores)
    } else {
        let mut gram = vec![0.0; s * s];
        for i in 0..s {
            for j in i..s {
                let g = dot(&centered[i], &centered[j]);
                gram[i * s + j] = g;
                gram[j * s + i] = g;
            }
        }
        let (vals, vecs) = jacobi_eigen(&gram, s)?;
        let scores = (0..s)
            .map(|i| {
                (0..s)
                    .map(|c| vecs[i * s + c] * vals[c].max(0.0).sqrt())
                    .collect()
            })
            .collect();
        (vals, scores)
    };
    let top = vals.first().cloned().unwrap_or(0.0).max(0.0);
    let rank = vals.iter().filter(|&&l| l > 1e-12 * top && l > 0.0).count();
    let k = ncomp.min(rank).max(1);
    let explained_variance = vals.iter().take(k).map(|l| l.max(0.0) / s as f64).collect();
    let proj = |i: usize| &scores[i][..k];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut report = StraightnessReport {
        path_lengths: Vec::new(),
        chord_lengths: Vec::new(),
        ratios: Vec::new(),
        closed_paths: 0,
        ncomp: k,
        explained_variance,
    };
    let mut offset = 0;
    for t in trajectories {
        let path: f64 = (offset..offset + t.len() - 1)
            .map(|i| dist(proj(i), proj(i + 1)))
            .sum();
        let chord = dist(proj(offset), proj(offset + t.len() - 1));
        let ratio = if chord > 1e-14 * path.max(1e-300) && chord > 0.0 {
            (path / chord).max(1.0)
        } else {
            report.closed_paths += 1;
            f64::INFINITY
        };
        report.path_lengths.push(path);
        report.chord_lengths.push(chord);
        report.ratios.push(ratio);
        offset += t.len();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use std::sync::Arc;

    fn ens(rows: Vec<Vec<f64>>) -> Ensemble {
        let g = Arc::new(Grid::new(vec![rows[0].len()], vec![1.0], 1).unwrap());
        Ensemble::from_values(g, rows).unwrap()
    }

    #[test]
    fn w1_small_cases() {
        assert_eq!(w1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w1_1d(&[0.0, 2.0], &[3.0, 1.0]).unwrap(), 1.0);
        assert_eq!(w1_1d(&[1.0, 5.0, 2.0], &[5.0, 2.0, 1.0]).unwrap(), 0.0);
        assert!(w1_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1_unequal_counts_point_masses() {
        let a = vec![0.0; 3];
        let b = vec![2.0; 7];
        assert!((w1_1d(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        // same law at different sample sizes
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let b: Vec<f64> = (0..300).map(|i| i as f64 / 299.0).collect();
        assert!(w1_1d(&a, &b).unwrap() < 0.01);
    }

    #[test]
    fn gaussian_w2_closed_form() {
        assert_eq!(w2_gaussian_1d(0.0, 1.0, 0.0, 1.0), 0.0);
        assert_eq!(w2_gaussian_1d(0.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(w2_gaussian_1d(0.0, 1.0, 0.0, 2.0), 1.0);
    }

    #[test]
    fn empirical_gaussian_w2_of_point_mass() {
        // δ_m vs N(m, s²): W₂ = s
        let w = w2_empirical_gaussian(&[3.0], 3.0, 0.7).unwrap();
        assert!((w - 0.7).abs() < 1e-12);
        // two atoms at ±c vs N(0,1): cost = 1 + c² − 2c·E|Z| = 1 + c² − 2c√(2/π)
        let c = 0.8;
        let w = w2_empirical_gaussian(&[-c, c], 0.0, 1.0).unwrap();
        let want = (1.0 + c * c - 2.0 * c * (2.0 / std::f64::consts::PI).sqrt()).sqrt();
        assert!((w - want).abs() < 1e-10, "{w} vs {want}");
    }

    #[test]
    fn empirical_gaussian_w2_stratified_is_small() {
        let normal = Normal::new(1.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..4096)
            .map(|i| normal.inverse_cdf((i as f64 + 0.5) / 4096.0))
            .collect();
        // midpoint-quantile atoms at n = 4096 sit ≈ 0.0058σ from the Gaussian
        let w = w2_empirical_gaussian(&xs, 1.0, 2.0).unwrap();
        assert!((w / 2.0 - 0.005815).abs() < 2e-4, "{w}");
    }

    #[test]
    fn mean_std_errors_cases() {
        let r = ens(vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![2.0, 1.0]]);
        let e = mean_std_errors(&r, &r).unwrap();
        assert_eq!((e.e_mu[0], e.e_sigma[0]), (0.0, 0.0));
        let doubled = ens(r.iter().map(|m| m.values().iter().map(|x| 2.0 * x).collect()).collect());
        let e = mean_std_errors(&doubled, &r).unwrap();
        assert!((e.e_mu[0] - 1.0).abs() < 1e-12 && (e.e_sigma[0] - 1.0).abs() < 1e-12);
        let zero = ens(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let e = mean_std_errors(&r, &zero).unwrap();
        assert!(!e.e_mu_normalized[0] && !e.e_sigma_normalized[0]);
    }

    #[test]
    fn onepoint_permutation_invariant() {
        let r = ens(vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![2.0, 1.0]]);
        let p = ens(vec![vec![2.0, 1.0], vec![1.0, 2.0], vec![3.0, 0.0]]);
        assert_eq!(w1_onepoint(&p, &r).unwrap(), vec![0.0]);
        let shifted = ens(r.iter().map(|m| m.values().iter().map(|x| x + 1.0).collect()).collect());
        assert!((w1_onepoint(&shifted, &r).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rel_l2_cases() {
        let g = Arc::new(Grid::torus_1d(8).unwrap());
        let t = Field::from_fn(g.clone(), |x, _| x[0].sin() + 2.0).unwrap();
        assert_eq!(rel_l2(&t, &t).unwrap(), 0.0);
        assert!((rel_l2(&Field::zeros(g), &t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn assignment_matches_permutations() {
        let mut rng = Rng::new(3);
        for n in 1..=6 {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
            let (best, assign) = assignment(&cost, n).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut brute = f64::INFINITY;
            permute(&mut perm, 0, &mut |p| {
                brute = brute.min(p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum());
            });
            assert!((best - brute).abs() < 1e-12, "n={n}");
            let mut seen = assign.clone();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn exact_w2_translation_and_sliced_below() {
        let mut rng = Rng::new(8);
        let a = ens((0..20).map(|_| rng.normal_vec(5)).collect());
        let b = ens(a.iter().map(|m| m.values().iter().map(|x| x + 0.5).collect()).collect());
        let w = exact_w2_ensembles(&a, &b).unwrap();
        assert!((w - (5.0f64 * 0.25).sqrt()).abs() < 1e-12);
        let s = sliced_w2(&a, &b, 64, &mut rng).unwrap();
        assert!(s <= w + 1e-12);
    }

    #[test]
    fn jacobi_reconstructs() {
        let m = [4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 1.0];
        let (vals, vecs) = jacobi_eigen(&m, 3).unwrap();
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|c| vecs[i * 3 + c] * vals[c] * vecs[j * 3 + c]).sum();
                assert!((r - m[i * 3 + j]).abs() < 1e-12);
            }
        }
        assert!((vals.iter().sum::<f64>() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn straightness_geometry() {
        let line: Vec<Vec<f64>> = (0..5).map(|t| vec![t as f64, 2.0 * t as f64, -(t as f64)]).collect();
        let r = pca_straightness(&[line], 3).unwrap();
        assert!((r.ratios[0] - 1.0).abs() < 1e-12);
        let corner = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let r = pca_straightness(&[corner], 2).unwrap();
        assert!((r.ratios[0] - 2f64.sqrt()).abs() < 1e-12);
        let closed = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]];
        let r = pca_straightness(&[closed], 2).unwrap();
        assert!(r.ratios[0].is_infinite() && r.closed_paths == 1);
    }

    #[test]
    fn straightness_gram_path_high_dim() {
        // 3 snapshots in 50 dimensions: right angle with equal legs
        let mut a = vec![0.0; 50];
        let mut b = a.clone();
        b[7] = 2.0;
        let mut c = b.clone();
        c[30] = 2.0;
        a[0] = 0.0;
        let r = pca_straightness(&[vec![a, b, c]], 3).unwrap();
        assert!((r.ratios[0] - 2f64.sqrt()).abs() < 1e-10);
    }
}
