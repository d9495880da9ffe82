//! Periodic grids, fields and ensembles.
//!
//! Field values are stored flat in row-major axis order with the channel index fastest:
//! the value of channel `c` at grid point `(i_0, .., i_{d-1})` lives at
//! `((i_0 * n_1 + i_1) * n_2 + ..) * channels + c`.

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Result, ReflowError};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    channels: usize,
}

impl Grid {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, channels: usize) -> Result<Self> {
        if dims.is_empty() {
            return Err(ReflowError::InvalidGrid("at least one axis required".into()));
        }
        if dims.len() != spacing.len() {
            return Err(ReflowError::InvalidGrid(format!(
                "{} axes but {} spacings",
                dims.len(),
                spacing.len()
            )));
        }
        if let Some(n) = dims.iter().find(|&&n| n < 2) {
            return Err(ReflowError::InvalidGrid(format!("axis with {n} points")));
        }
        if spacing.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(ReflowError::InvalidGrid("spacing must be positive".into()));
        }
        if channels == 0 {
            return Err(ReflowError::InvalidGrid("zero channels".into()));
        }
        Ok(Self {
            dims,
            spacing,
            channels,
        })
    }

    /// Grid on the torus `[0, 2π)^d` with `channels` components.
    pub fn torus(dims: &[usize], channels: usize) -> Result<Self> {
        let spacing = dims.iter().map(|&n| TAU / n as f64).collect();
        Self::new(dims.to_vec(), spacing, channels)
    }

    pub fn torus_1d(n: usize) -> Result<Self> {
        Self::torus(&[n], 1)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Number of grid points.
    pub fn points(&self) -> usize {
        self.dims.iter().product()
    }

    /// Length of a field bound to this grid.
    pub fn len(&self) -> usize {
        self.points() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `Δ^d` of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.dims
            .iter()
            .zip(&self.spacing)
            .map(|(&n, &h)| n as f64 * h)
            .collect()
    }

    /// Multi-index of flat point index `p` (not including the channel).
    pub fn unravel(&self, mut p: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (axis, &n) in self.dims.iter().enumerate().rev() {
            idx[axis] = p % n;
            p /= n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &n)| acc * n + i % n)
    }

    /// Coordinates of point `p`.
    pub fn coords(&self, p: usize) -> Vec<f64> {
        self.unravel(p)
            .into_iter()
            .zip(&self.spacing)
            .map(|(i, &h)| i as f64 * h)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        ensure_len(grid.len(), values.len())?;
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    /// Builds a field from `f(coords, channel)`.
    pub fn from_fn(grid: Arc<Grid>, mut f: impl FnMut(&[f64], usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for p in 0..grid.points() {
            let x = grid.coords(p);
            for c in 0..grid.channels() {
                values.push(f(&x, c));
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Channel `c` as a contiguous vector over grid points.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.grid.channels())
            .copied()
            .collect()
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|x| a * x).collect(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Field) -> Result<Field> {
        self.same_grid(other)?;
        Ok(Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.axpy(-1.0, other)
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid {
            Ok(())
        } else {
            Err(ReflowError::InvalidGrid("fields live on different grids".into()))
        }
    }

    /// Quadrature L² norm, see [`field_l2_norm`].
    pub fn l2_norm(&self) -> f64 {
        quadrature_norm(&self.values, self.grid.cell_volume())
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(ReflowError::NonFinite { index }),
        None => Ok(()),
    }
}

/// `sqrt(weight * Σ v²)`.
pub fn quadrature_norm(values: &[f64], weight: f64) -> f64 {
    (weight * values.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// Grid quadrature of the L² norm, `sqrt(Δ^d Σ values²)`.
pub fn field_l2_norm(f: &Field) -> Result<f64> {
    check_finite(&f.values)?;
    Ok(f.l2_norm())
}

/// Field of i.i.d. standard normal entries.
pub fn gaussian_field(grid: Arc<Grid>, rng: &mut Rng) -> Field {
    let values = rng.normal_vec(grid.len());
    Field { grid, values }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    grid: Arc<Grid>,
    members: Vec<Field>,
}

impl Ensemble {
    pub fn new(members: Vec<Field>) -> Result<Self> {
        let first = members.first().ok_or(ReflowError::EmptyInput("ensemble"))?;
        let grid = first.grid.clone();
        for m in &members[1..] {
            first.same_grid(m)?;
        }
        Ok(Self { grid, members })
    }

    pub fn from_values(grid: Arc<Grid>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let members = rows
            .into_iter()
            .map(|v| Field::new(grid.clone(), v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn members(&self) -> &[Field] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Field> {
        self.members.iter()
    }

    /// Pointwise mean field.
    pub fn mean(&self) -> Field {
        let n = self.members.len() as f64;
        let mut acc = vec![0.0; self.grid.len()];
        for m in &self.members {
            for (a, x) in acc.iter_mut().zip(&m.values) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        Field {
            grid: self.grid.clone(),
            values: acc,
        }
    }

    /// Pointwise population standard deviation (divisor `n`).
    pub fn std(&self) -> Field {
        let mean = self.mean();
        let n = self.members.len() as f64;
        let mut acc = vec![0.0; self.grid.len()];
        for m in &self.members {
            for ((a, x), mu) in acc.iter_mut().zip(&m.values).zip(&mean.values) {
                *a += (x - mu) * (x - mu);
            }
        }
        Field {
            grid: self.grid.clone(),
            values: acc.into_iter().map(|s| (s / n).sqrt()).collect(),
        }
    }

    /// Values of every member at flat index `i`.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.members.iter().map(|m| m.values[i]).collect()
    }
}
