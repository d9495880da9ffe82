//! Fourier analysis of fields and ensembles.
//!
//! Coefficients use the unitary DFT,
//! `û_k = N^{-1/2} Σ_x u(x) exp(-2πi k·x/N)` per channel, so `Σ_k |û_k|² = Σ_x u(x)²`
//! and the ℓ1-binned energies `E_r = (Δ^d/2) Σ_{|k|₁=r} |û_k|²` sum to `‖u‖²_{L²}/2`.
//! Integer wavevectors use the signed representative `k_i ∈ (-N_i/2, N_i/2]`;
//! projector bands are Euclidean balls in that index lattice.

use std::sync::Arc;

use log::warn;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{Ensemble, Field, Grid};
use crate::metrics::{exact_w2_ensembles, sliced_w2};
use crate::rng::Rng;

/// Fourier coefficients of a field, same flat layout as [`Field`].
#[derive(Debug, Clone)]
pub struct Spectral {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
}

impl Spectral {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn from_coeffs(grid: Arc<Grid>, coeffs: Vec<Complex64>) -> Result<Self> {
        crate::error::ensure_len(grid.len(), coeffs.len())?;
        Ok(Self { grid, coeffs })
    }

    /// `Σ_k |û_k|²` summed over channels for each wavevector (point index).
    pub fn power(&self) -> Vec<f64> {
        let m = self.grid.channels();
        self.coeffs
            .chunks_exact(m)
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }
}

/// In-place unitary n-dimensional FFT of one channel laid out row-major.
fn fft_nd(data: &mut [Complex64], dims: &[usize], inverse: bool, planner: &mut FftPlanner<f64>) {
    let total: usize = dims.iter().product();
    let mut stride = total;
    let mut line = Vec::new();
    for &n in dims {
        stride /= n;
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        line.resize(n, Complex64::new(0.0, 0.0));
        let block = n * stride;
        for outer in (0..total).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (j, z) in line.iter_mut().enumerate() {
                    *z = data[base + j * stride];
                }
                fft.process(&mut line);
                for (j, z) in line.iter().enumerate() {
                    data[base + j * stride] = *z;
                }
            }
        }
    }
    let scale = 1.0 / (total as f64).sqrt();
    data.iter_mut().for_each(|z| *z *= scale);
}

fn transform_channels(grid: &Grid, input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let m = grid.channels();
    let n = grid.points();
    let mut planner = FftPlanner::new();
    let mut out = vec![Complex64::new(0.0, 0.0); input.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..m {
        for p in 0..n {
            buf[p] = input[p * m + c];
        }
        fft_nd(&mut buf, grid.dims(), inverse, &mut planner);
        for p in 0..n {
            out[p * m + c] = buf[p];
        }
    }
    out
}

/// Forward unitary DFT.
pub fn dft(f: &Field) -> Spectral {
    let input: Vec<Complex64> = f.values().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Spectral {
        grid: f.grid().clone(),
        coeffs: transform_channels(f.grid(), &input, false),
    }
}

/// Inverse unitary DFT, keeping the real part.
pub fn idft(s: &Spectral) -> Result<Field> {
    let out = transform_channels(&s.grid, &s.coeffs, true);
    Field::new(s.grid.clone(), out.into_iter().map(|z| z.re).collect())
}

/// Signed integer wavevector of point index `p`.
pub fn wavevector(grid: &Grid, p: usize) -> Vec<i64> {
    grid.unravel(p)
        .into_iter()
        .zip(grid.dims())
        .map(|(i, &n)| signed_index(i, n))
        .collect()
}

#[inline]
fn signed_index(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Physical wavevector `2π k / L` of point index `p`.
pub fn physical_wavevector(grid: &Grid, p: usize) -> Vec<f64> {
    wavevector(grid, p)
        .into_iter()
        .zip(grid.lengths())
        .map(|(k, l)| std::f64::consts::TAU * k as f64 / l)
        .collect()
}

fn index_norm(k: &[i64]) -> f64 {
    (k.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Band {
    /// Modes with `|k| ≤ K`.
    Low,
    /// Modes with `K < |k| ≤ 2K`, i.e. `P_{≤2K} - P_{≤K}`.
    Annulus,
    /// Modes with `|k| > K`.
    High,
}

fn band_mask(grid: &Grid, cutoff: usize, band: Band) -> Vec<bool> {
    let k = cutoff as f64;
    (0..grid.points())
        .map(|p| {
            let r = index_norm(&wavevector(grid, p));
            match band {
                Band::Low => r <= k,
                Band::Annulus => r > k && r <= 2.0 * k,
                Band::High => r > k,
            }
        })
        .collect()
}

fn apply_mask(s: &mut Spectral, mask: &[bool]) {
    let m = s.grid.channels();
    for (p, keep) in mask.iter().enumerate() {
        if !keep {
            for c in 0..m {
                s.coeffs[p * m + c] = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// Sharp Fourier projector. Cutoffs past Nyquist saturate to the full or empty projector.
pub fn project_bandlimited(f: &Field, cutoff: usize, band: Band) -> Result<Field> {
    let mut s = dft(f);
    let mask = band_mask(f.grid(), cutoff, band);
    apply_mask(&mut s, &mask);
    idft(&s)
}

/// ℓ1-binned energy spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub energies: Vec<f64>,
}

impl Spectrum {
    pub fn radii(&self) -> impl Iterator<Item = usize> + '_ {
        0..self.energies.len()
    }

    pub fn total(&self) -> f64 {
        self.energies.iter().sum()
    }
}

fn l1_radius_max(grid: &Grid) -> usize {
    grid.dims().iter().map(|&n| n / 2).sum()
}

/// `E_r = (Δ^d/2) Σ_{|k|₁=r} |û_k|²`, channel energies summed.
pub fn energy_spectrum(f: &Field) -> Spectrum {
    let grid = f.grid();
    let power = dft(f).power();
    let mut energies = vec![0.0; l1_radius_max(grid) + 1];
    let w = grid.cell_volume() / 2.0;
    for (p, e) in power.iter().enumerate() {
        let r: i64 = wavevector(grid, p).iter().map(|x| x.abs()).sum();
        energies[r as usize] += w * e;
    }
    Spectrum { energies }
}

/// Ensemble-averaged ℓ1 spectrum.
pub fn ensemble_energy_spectrum(ens: &Ensemble) -> Spectrum {
    let mut acc: Option<Vec<f64>> = None;
    for m in ens.iter() {
        let s = energy_spectrum(m).energies;
        match acc.as_mut() {
            None => acc = Some(s),
            Some(a) => a.iter_mut().zip(&s).for_each(|(x, y)| *x += y),
        }
    }
    let n = ens.len() as f64;
    Spectrum {
        energies: acc.unwrap().into_iter().map(|x| x / n).collect(),
    }
}

/// Mean `|û_k|²` over Euclidean shells `round(|k|) = s`; entry `s` is `None` for empty shells.
pub fn shell_average_power(power: &[f64], grid: &Grid) -> Vec<Option<f64>> {
    let smax = (index_norm(
        &grid.dims().iter().map(|&n| (n / 2) as i64).collect::<Vec<_>>(),
    ))
    .round() as usize;
    let mut sum = vec![0.0; smax + 1];
    let mut count = vec![0usize; smax + 1];
    for (p, e) in power.iter().enumerate() {
        let s = index_norm(&wavevector(grid, p)).round() as usize;
        sum[s] += e;
        count[s] += 1;
    }
    sum.into_iter()
        .zip(count)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect()
}

/// Least-squares fit of `y = C x^p` on log–log axes; returns `(C, p)`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(invalid("power-law fit needs at least two positive points"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("power-law fit needs distinct abscissae"));
    }
    let slope = sxy / sxx;
    Ok(((my - slope * mx).exp(), slope))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFunctionCurve {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Fitted exponent ζ₂ = 2α.
    pub zeta2: Option<f64>,
    /// Fitted prefactor C in `ω(r) = C r^{2α}`.
    pub prefactor: Option<f64>,
}

impl StructureFunctionCurve {
    /// Fits `C r^{ζ₂}` over radii in `[r_lo, r_hi]`.
    pub fn fit(&mut self, r_lo: f64, r_hi: f64) -> Result<()> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .radii
            .iter()
            .zip(&self.values)
            .filter(|(r, _)| **r >= r_lo && **r <= r_hi)
            .map(|(r, v)| (*r, *v))
            .unzip();
        let (c, p) = fit_power_law(&xs, &ys)?;
        self.prefactor = Some(c);
        self.zeta2 = Some(p);
        Ok(())
    }

    pub fn modulus(&self) -> Option<Modulus> {
        Some(Modulus {
            prefactor: self.prefactor?,
            two_alpha: self.zeta2?,
        })
    }
}

/// Structure-function modulus `ω(r) = C r^{2α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulus {
    pub prefactor: f64,
    pub two_alpha: f64,
}

impl Modulus {
    pub fn eval(&self, r: f64) -> f64 {
        self.prefactor * r.powf(self.two_alpha)
    }
}

/// Increment energies `‖u(·+h) - u‖²_{L²}` for every lattice shift `h`, from the power
/// spectrum: `2Δ^d (Σ|û|² - Σ_k |û_k|² cos(2π k·h/N))`.
pub fn increment_energies(power: &[f64], grid: &Grid) -> Vec<f64> {
    let n = grid.points();
    let total: f64 = power.iter().sum();
    let mut buf: Vec<Complex64> = power.iter().map(|&e| Complex64::new(e, 0.0)).collect();
    let mut planner = FftPlanner::new();
    fft_nd(&mut buf, grid.dims(), true, &mut planner);
    let scale = (n as f64).sqrt();
    let w = grid.cell_volume();
    buf.iter()
        .map(|z| (2.0 * w * (total - scale * z.re)).max(0.0))
        .collect()
}

fn shift_length(grid: &Grid, p: usize) -> f64 {
    wavevector(grid, p)
        .iter()
        .zip(grid.spacing())
        .map(|(&n, &h)| (n as f64 * h).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn ball_average(increments: &[f64], grid: &Grid, radii: &[f64]) -> StructureFunctionCurve {
    let lengths: Vec<f64> = (0..grid.points()).map(|p| shift_length(grid, p)).collect();
    let mut out_r = Vec::with_capacity(radii.len());
    let mut out_v = Vec::with_capacity(radii.len());
    for &r in radii {
        if r == 0.0 {
            out_r.push(0.0);
            out_v.push(0.0);
            continue;
        }
        let (sum, count) = lengths
            .iter()
            .zip(increments)
            .filter(|(l, _)| **l > 0.0 && **l <= r * (1.0 + 1e-12))
            .fold((0.0, 0usize), |(s, c), (_, d)| (s + d, c + 1));
        if count == 0 {
            warn!("structure function: no lattice shift with 0 < |h| <= {r}, skipping radius");
            continue;
        }
        out_r.push(r);
        out_v.push(sum / count as f64);
    }
    StructureFunctionCurve {
        radii: out_r,
        values: out_v,
        zeta2: None,
        prefactor: None,
    }
}

fn check_radii(grid: &Grid, radii: &[f64]) -> Result<()> {
    let half = grid.lengths().into_iter().fold(f64::INFINITY, f64::min) / 2.0;
    match radii.iter().find(|&&r| !(0.0..=half * (1.0 + 1e-12)).contains(&r)) {
        Some(r) => Err(invalid(format!("radius {r} outside [0, half-domain {half}]"))),
        None => Ok(()),
    }
}

/// `S_r²(u)`: mean increment energy over lattice shifts with `0 < |h| ≤ r`, periodic wrap.
pub fn structure_function(f: &Field, radii: &[f64]) -> Result<StructureFunctionCurve> {
    check_radii(f.grid(), radii)?;
    let inc = increment_energies(&dft(f).power(), f.grid());
    Ok(ball_average(&inc, f.grid(), radii))
}

/// Law version `S_r²(μ)`: member increments averaged before the ball average.
pub fn ensemble_structure_function(ens: &Ensemble, radii: &[f64]) -> Result<StructureFunctionCurve> {
    check_radii(ens.grid(), radii)?;
    let grid = ens.grid();
    let mut acc = vec![0.0; grid.points()];
    for m in ens.iter() {
        let inc = increment_energies(&dft(m).power(), grid);
        acc.iter_mut().zip(&inc).for_each(|(a, x)| *a += x);
    }
    let n = ens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(ball_average(&acc, grid, radii))
}

/// Structure function implied by an expected power spectrum (per point, channels summed).
pub fn structure_function_from_power(
    power: &[f64],
    grid: &Grid,
    radii: &[f64],
) -> Result<StructureFunctionCurve> {
    check_radii(grid, radii)?;
    Ok(ball_average(&increment_energies(power, grid), grid, radii))
}

/// `sup_{0<|h|≤1} ‖u(·+h) - u‖₂ / |h|^s` over lattice shifts.
pub fn besov_seminorm(f: &Field, s: f64) -> Result<f64> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(invalid(format!("Besov order {s} outside (0, 1]")));
    }
    let grid = f.grid();
    let inc = increment_energies(&dft(f).power(), grid);
    Ok((0..grid.points())
        .filter_map(|p| {
            let l = shift_length(grid, p);
            (l > 0.0 && l <= 1.0 + 1e-12).then(|| inc[p].sqrt() / l.powf(s))
        })
        .fold(0.0, f64::max))
}

/// Spectral gradient; returns `|∇u|(x)` with channel contributions summed in quadrature.
pub fn gradient_magnitude(f: &Field) -> Result<Vec<f64>> {
    let grid = f.grid();
    let s = dft(f);
    let m = grid.channels();
    let mut sq = vec![0.0; grid.points()];
    for axis in 0..grid.ndim() {
        let mut d = s.clone();
        let n_axis = grid.dims()[axis];
        for p in 0..grid.points() {
            let idx = grid.unravel(p)[axis];
            let kappa = if n_axis % 2 == 0 && idx == n_axis / 2 {
                0.0
            } else {
                physical_wavevector(grid, p)[axis]
            };
            for c in 0..m {
                d.coeffs[p * m + c] *= Complex64::new(0.0, kappa);
            }
        }
        let g = idft(&d)?;
        for (p, chunk) in g.values().chunks_exact(m).enumerate() {
            sq[p] += chunk.iter().map(|x| x * x).sum::<f64>();
        }
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

fn sup_norm(f: &Field) -> f64 {
    let m = f.grid().channels();
    f.values()
        .chunks_exact(m)
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinReport {
    pub cutoff: usize,
    pub grad_sup: f64,
    pub l2_norm: f64,
    /// `‖∇u‖_∞ / (K^{1+d/2} ‖u‖₂)`.
    pub ratio: f64,
    /// Cauchy–Schwarz constant `sqrt(Σ_{|k|≤K} |κ|² / |D|) / K^{1+d/2}` bounding `ratio`.
    pub rigorous_bound: f64,
}

/// Measures the Bernstein ratio of a field bandlimited to `|k| ≤ cutoff`.
pub fn bernstein_check(f: &Field, cutoff: usize) -> Result<BernsteinReport> {
    if cutoff == 0 {
        return Err(invalid("Bernstein check needs K >= 1"));
    }
    let grid = f.grid();
    let d = grid.ndim() as f64;
    let scale = (cutoff as f64).powf(1.0 + d / 2.0);
    let grad_sup = gradient_magnitude(f)?.into_iter().fold(0.0, f64::max);
    let l2_norm = f.l2_norm();
    let ratio = if l2_norm > 0.0 {
        grad_sup / (scale * l2_norm)
    } else {
        0.0
    };
    let mask = band_mask(grid, cutoff, Band::Low);
    let kappa_sq: f64 = (0..grid.points())
        .filter(|&p| mask[p])
        .map(|p| physical_wavevector(grid, p).iter().map(|x| x * x).sum::<f64>())
        .sum();
    let volume: f64 = grid.lengths().iter().product();
    Ok(BernsteinReport {
        cutoff,
        grad_sup,
        l2_norm,
        ratio,
        rigorous_bound: (kappa_sq / volume).sqrt() / scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusReport {
    pub cutoff: usize,
    pub grad_sup: f64,
    pub sup_norm: f64,
    pub l2_norm: f64,
    /// `‖∇f‖_∞ / (K ‖f‖_∞)`.
    pub ratio_sup: f64,
    /// `‖∇f‖_∞ / (K^{1-d/2} ‖f‖₂)`.
    pub ratio_l2: f64,
}

/// Lower-bound ratios for a field supported on the annulus `K < |k| ≤ 2K`.
pub fn annulus_check(f: &Field, cutoff: usize) -> Result<AnnulusReport> {
    if cutoff == 0 {
        return Err(invalid("annulus check needs K >= 1"));
    }
    let l2_norm = f.l2_norm();
    if l2_norm == 0.0 {
        return Err(invalid("annulus check is undefined for the zero field"));
    }
    let d = f.grid().ndim() as f64;
    let k = cutoff as f64;
    let grad_sup = gradient_magnitude(f)?.into_iter().fold(0.0, f64::max);
    let sup = sup_norm(f);
    Ok(AnnulusReport {
        cutoff,
        grad_sup,
        sup_norm: sup,
        l2_norm,
        ratio_sup: grad_sup / (k * sup),
        ratio_l2: grad_sup / (k.powf(1.0 - d / 2.0) * l2_norm),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub cutoff: usize,
    /// Mean `‖P_{>K} u‖²` over the ensemble.
    pub tail_energy: f64,
    /// Mean `‖u‖²`.
    pub total_energy: f64,
    /// `ω(c_d / K)`.
    pub modulus_value: f64,
    /// `tail_energy / ω(c_d / K)`.
    pub bound_ratio: f64,
    /// `sqrt(tail_energy)`, the cost of the projection coupling `(u, P_{≤K} u)`.
    pub coupling_bound: f64,
    /// Exact empirical W₂ between the ensemble and its projection (optimal assignment).
    pub w2_exact: f64,
    /// Sliced-W₂ lower estimate of the same distance.
    pub w2_sliced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub modulus: Modulus,
    pub c_d: f64,
    /// Smallest `C_d` with `tail ≤ C_d ω(c_d/K)` for every reported K.
    pub fitted_capital_c_d: f64,
    pub rows: Vec<TailReport>,
}

impl CoverageReport {
    /// Coverage term `C_d ω(c_d/K)` with the fitted constant.
    pub fn coverage_term(&self, cutoff: usize) -> f64 {
        self.fitted_capital_c_d * self.modulus.eval(self.c_d / cutoff as f64)
    }

    /// Count of cutoffs violating `sliced ≤ exact ≤ coupling` (with rounding slack).
    pub fn sandwich_violations(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| {
                let slack = 1e-10 * (1.0 + r.coupling_bound);
                r.w2_sliced > r.w2_exact + slack || r.w2_exact > r.coupling_bound + slack
            })
            .count()
    }
}

/// Per-cutoff tail energies and the projection-coupling W₂ sandwich.
pub fn tail_coverage_report(
    ens: &Ensemble,
    cutoffs: &[usize],
    modulus: Modulus,
    c_d: f64,
    n_directions: usize,
    rng: &mut Rng,
) -> Result<CoverageReport> {
    let grid = ens.grid();
    let total_energy = ens.iter().map(|m| m.l2_norm().powi(2)).sum::<f64>() / ens.len() as f64;
    let spectra: Vec<Spectral> = ens.iter().map(dft).collect();
    let mut rows = Vec::with_capacity(cutoffs.len());
    for &k in cutoffs {
        if k == 0 {
            return Err(invalid("cutoff must be >= 1"));
        }
        let low = band_mask(grid, k, Band::Low);
        let mut projected = Vec::with_capacity(ens.len());
        let mut tail = 0.0;
        for (s, m) in spectra.iter().zip(ens.iter()) {
            let mut p = s.clone();
            apply_mask(&mut p, &low);
            let pf = idft(&p)?;
            tail += m.sub(&pf)?.l2_norm().powi(2);
            projected.push(pf);
        }
        tail /= ens.len() as f64;
        let projected = Ensemble::new(projected)?;
        let modulus_value = modulus.eval(c_d / k as f64);
        rows.push(TailReport {
            cutoff: k,
            tail_energy: tail,
            total_energy,
            modulus_value,
            bound_ratio: if modulus_value > 0.0 { tail / modulus_value } else { f64::INFINITY },
            coupling_bound: tail.sqrt(),
            w2_exact: exact_w2_ensembles(ens, &projected)?,
            w2_sliced: sliced_w2(ens, &projected, n_directions, rng)?,
        });
    }
    let fitted = rows
        .iter()
        .map(|r| if r.modulus_value > 0.0 { r.tail_energy / r.modulus_value } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(CoverageReport {
        modulus,
        c_d,
        fitted_capital_c_d: fitted,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gaussian_field;
    use std::f64::consts::{PI, TAU};

    fn torus(n: usize) -> Arc<Grid> {
        Arc::new(Grid::torus_1d(n).unwrap())
    }

    /// Direct O(N²) unitary DFT of a 1D single-channel signal.
    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let a = -TAU * (k * j) as f64 / n as f64;
                        Complex64::new(v * a.cos(), v * a.sin())
                    })
                    .sum::<Complex64>()
                    / (n as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn pure_tone_has_two_modes() {
        let f = Field::from_fn(torus(64), |x, _| (3.0 * x[0]).cos()).unwrap();
        let s = dft(&f);
        for (k, z) in s.coeffs().iter().enumerate() {
            if k == 3 || k == 61 {
                assert!(z.norm() > 1.0);
            } else {
                assert!(z.norm() < 1e-12, "mode {k}: {z}");
            }
        }
    }

    #[test]
    fn matches_naive_dft_and_parseval() {
        let f = gaussian_field(torus(48), &mut Rng::new(2));
        let s = dft(&f);
        let naive = naive_dft(f.values());
        for (a, b) in s.coeffs().iter().zip(&naive) {
            assert!((a - b).norm() < 1e-10);
        }
        let e_x: f64 = f.values().iter().map(|x| x * x).sum();
        let e_k: f64 = s.power().iter().sum();
        assert!((e_x - e_k).abs() < 1e-10 * e_x);
        let back = idft(&s).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn two_dimensional_roundtrip_multichannel() {
        let g = Arc::new(Grid::torus(&[8, 12], 2).unwrap());
        let f = gaussian_field(g, &mut Rng::new(4));
        let back = idft(&dft(&f)).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut v = vec![0.0; 32];
        v[5] = 1.0;
        let f = Field::new(torus(32), v).unwrap();
        for z in dft(&f).coeffs() {
            assert!((z.norm() - 1.0 / 32f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn projector_tone_and_cutoff() {
        let f = Field::from_fn(torus(32), |x, _| (3.0 * x[0]).sin()).unwrap();
        let keep = project_bandlimited(&f, 5, Band::Low).unwrap();
        let kill = project_bandlimited(&f, 2, Band::Low).unwrap();
        for (a, b) in keep.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(kill.values().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn projector_idempotent_and_partition() {
        let g = Arc::new(Grid::torus(&[16, 16], 1).unwrap());
        let f = gaussian_field(g, &mut Rng::new(5));
        for k in [0, 1, 3, 6, 100] {
            let low = project_bandlimited(&f, k, Band::Low).unwrap();
            let high = project_bandlimited(&f, k, Band::High).unwrap();
            let low2 = project_bandlimited(&low, k, Band::Low).unwrap();
            for (a, b) in low.values().iter().zip(low2.values()) {
                assert!((a - b).abs() < 1e-12);
            }
            let split = low.l2_norm().powi(2) + high.l2_norm().powi(2);
            assert!((split - f.l2_norm().powi(2)).abs() < 1e-10 * f.l2_norm().powi(2));
            for ((a, b), c) in low.values().iter().zip(high.values()).zip(f.values()) {
                assert!((a + b - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn annulus_is_difference_of_low_passes() {
        let f = gaussian_field(torus(64), &mut Rng::new(6));
        let ann = project_bandlimited(&f, 4, Band::Annulus).unwrap();
        let lo2 = project_bandlimited(&f, 8, Band::Low).unwrap();
        let lo1 = project_bandlimited(&f, 4, Band::Low).unwrap();
        for ((a, b), c) in ann.values().iter().zip(lo2.values()).zip(lo1.values()) {
            assert!((a - (b - c)).abs() < 1e-12);
        }
    }

    #[test]
    fn tone_energy_in_single_bin() {
        let f = Field::from_fn(torus(64), |x, _| (3.0 * x[0]).cos()).unwrap();
        let s = energy_spectrum(&f);
        let total = f.l2_norm().powi(2) / 2.0;
        assert!((s.energies[3] - total).abs() < 1e-12);
        assert!((s.total() - total).abs() < 1e-12);
    }

    #[test]
    fn spectrum_partition_multichannel_2d() {
        let g = Arc::new(Grid::torus(&[8, 16], 3).unwrap());
        let f = gaussian_field(g.clone(), &mut Rng::new(8));
        let s = energy_spectrum(&f);
        let s_power: f64 = dft(&f).power().iter().sum::<f64>() * g.cell_volume() / 2.0;
        assert!((s.total() - s_power).abs() < 1e-10 * s_power);
        assert_eq!(s.energies.len(), 4 + 8 + 1);
    }

    /// Brute-force structure function: explicit shifted differences.
    fn brute_structure(f: &[f64], h: f64, r: f64) -> f64 {
        let n = f.len() as i64;
        let mut sum = 0.0;
        let mut count = 0;
        for s in -(n / 2) + 1..=n / 2 {
            let len = (s as f64 * h).abs();
            if len == 0.0 || len > r {
                continue;
            }
            let mut acc = 0.0;
            for j in 0..n {
                let d = f[((j + s).rem_euclid(n)) as usize] - f[j as usize];
                acc += d * d;
            }
            sum += h * acc;
            count += 1;
        }
        sum / count as f64
    }

    #[test]
    fn structure_function_matches_brute_force() {
        let g = torus(64);
        let h = g.spacing()[0];
        let f = Field::from_fn(g, |x, _| (5.0 * x[0]).sin() + 0.3 * (2.0 * x[0]).cos()).unwrap();
        let radii = [0.1, 0.5, 1.0, 2.0, 3.0];
        let curve = structure_function(&f, &radii).unwrap();
        for (r, v) in curve.radii.iter().zip(&curve.values) {
            let b = brute_structure(f.values(), h, *r);
            assert!((v - b).abs() < 1e-10, "r={r}: {v} vs {b}");
        }
    }

    #[test]
    fn structure_function_constant_zero_and_tiny_radius_skipped() {
        let f = Field::constant(torus(32), 2.5);
        let curve = structure_function(&f, &[0.0, 0.01, 0.5, 1.0]).unwrap();
        // 0.01 < Δ has no shift and is skipped; r = 0 is kept by convention.
        assert_eq!(curve.radii, vec![0.0, 0.5, 1.0]);
        assert!(curve.values.iter().all(|v| v.abs() < 1e-20));
        assert!(structure_function(&f, &[4.0]).is_err());
    }

    #[test]
    fn besov_properties() {
        let g = torus(64);
        assert_eq!(besov_seminorm(&Field::constant(g.clone(), 1.0), 0.5).unwrap(), 0.0);
        let f = Field::from_fn(g.clone(), |x, _| (3.0 * x[0]).sin()).unwrap();
        let b = besov_seminorm(&f, 1.0).unwrap();
        let b2 = besov_seminorm(&f.scaled(2.0), 1.0).unwrap();
        assert!((b2 - 2.0 * b).abs() < 1e-12 * b);
        // brute-force sup over shifts
        let h = g.spacing()[0];
        let mut best: f64 = 0.0;
        for s in 1..=10i64 {
            let len = s as f64 * h;
            if len > 1.0 {
                break;
            }
            let acc: f64 = (0..64)
                .map(|j| (f.values()[((j + s) % 64) as usize] - f.values()[j as usize]).powi(2))
                .sum();
            best = best.max((h * acc).sqrt() / len);
        }
        assert!((b - best).abs() < 1e-10);
        assert!(besov_seminorm(&f, 0.0).is_err());
    }

    #[test]
    fn bernstein_pure_tone_closed_form() {
        for k in [2usize, 4, 8] {
            let f = Field::from_fn(torus(64), |x, _| (k as f64 * x[0]).sin()).unwrap();
            let rep = bernstein_check(&f, k).unwrap();
            let expected = k as f64 / ((k as f64).powf(1.5) * PI.sqrt());
            assert!((rep.ratio - expected).abs() < 1e-10, "{} vs {expected}", rep.ratio);
            assert!(rep.ratio <= rep.rigorous_bound);
        }
        let c = bernstein_check(&Field::constant(torus(16), 3.0), 2).unwrap();
        assert!(c.ratio.abs() < 1e-12);
    }

    #[test]
    fn annulus_rejects_zero_field() {
        assert!(annulus_check(&Field::zeros(torus(16)), 2).is_err());
        let f = Field::from_fn(torus(64), |x, _| (6.0 * x[0]).cos()).unwrap();
        let r = annulus_check(&f, 4).unwrap();
        assert!((r.ratio_sup - 1.5).abs() < 1e-10);
    }

    #[test]
    fn power_law_fit_exact() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        let (c, p) = fit_power_law(&xs, &ys).unwrap();
        assert!((c - 3.0).abs() < 1e-12 && (p - 1.7).abs() < 1e-12);
    }
}
