//! Uniform 1D grids and functions sampled on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Diffusion1D, TestFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n: usize,
}

impl Grid1D {
    /// Uniform grid with `n` nodes; `n` must be odd so that a symmetric grid
    /// has a node at the origin.
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidInput(format!("grid bounds [{x_min}, {x_max}] are not ordered")));
        }
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("grid node count must be odd and >= 3, got {n}")));
        }
        Ok(Self { x_min, x_max, n })
    }

    pub fn symmetric(half_width: f64, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n)
    }

    /// Grid covering `[x_min, x_max]` with spacing at most `h`.
    pub fn with_spacing(x_min: f64, x_max: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("grid spacing must be positive, got {h}")));
        }
        let mut cells = ((x_max - x_min) / h).ceil() as usize;
        if cells % 2 == 1 {
            cells += 1;
        }
        Self::new(x_min, x_max, cells.max(2) + 1)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.x_max
        } else {
            self.x_min + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    /// Same extent, half the spacing.
    pub fn refined(&self) -> Self {
        Self {
            n: 2 * self.n - 1,
            ..*self
        }
    }

    /// Same spacing, twice the extent about the midpoint.
    pub fn doubled_domain(&self) -> Self {
        let mid = 0.5 * (self.x_min + self.x_max);
        let half = self.x_max - mid;
        Self {
            x_min: mid - 2.0 * half,
            x_max: mid + 2.0 * half,
            n: 2 * (self.n - 1) + 1,
        }
    }

    /// Trapezoid quadrature weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i + 1 == self.n {
            0.5 * h
        } else {
            h
        }
    }

    /// Cell index `i` and fraction `θ` with `x = (1-θ) x_i + θ x_{i+1}`.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !(x >= self.x_min && x <= self.x_max) {
            return None;
        }
        let s = (x - self.x_min) / self.spacing();
        let i = (s.floor() as usize).min(self.n - 2);
        Some((i, s - i as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid1D,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_parts_unchecked(grid: Grid1D, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(*grid, grid.nodes().map(f).collect())
    }

    pub fn zeros(grid: &Grid1D) -> Self {
        Self {
            grid: *grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Invariant density of `model` on `grid`, normalized so that its
    /// trapezoid integral is one.
    pub fn invariant_density(model: &Diffusion1D, grid: &Grid1D) -> Result<Self> {
        let logs: Vec<f64> = grid.nodes().map(|x| model.log_density_unnorm(x)).collect();
        let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::NonNormalizable(format!("log-density of {} is not finite", model.label())));
        }
        let unnorm = Self::from_parts_unchecked(*grid, logs.iter().map(|l| (l - shift).exp()).collect());
        let z = unnorm.integrate();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::NonNormalizable(format!("quadrature mass {z}")));
        }
        Ok(unnorm.scaled(1.0 / z))
    }

    /// Narrow hat function of half-width `2 h` at `x0`, normalized to unit
    /// mass; the grid stand-in for a Dirac mass.
    pub fn bump(grid: &Grid1D, x0: f64) -> Result<Self> {
        let h = grid.spacing();
        let w = 2.0 * h;
        let f = Self::from_fn(grid, |x| (1.0 - (x - x0).abs() / w).max(0.0))?;
        let m = f.integrate();
        if !(m > 0.0) {
            return Err(Error::InvalidInput(format!("bump center {x0} is outside the grid")));
        }
        Ok(f.scaled(1.0 / m))
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| f(self.grid.node(i), *v))
            .collect();
        Self::from_parts_unchecked(self.grid, values)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|_, v| c * v)
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("grid functions live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect();
        Ok(Self::from_parts_unchecked(self.grid, values))
    }

    /// Trapezoid integral over the grid.
    pub fn integrate(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.weight(i) * v)
            .sum()
    }

    /// `∫ self(x) g(x) dx` by the trapezoid rule.
    pub fn integrate_product_with(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if *v == 0.0 {
                    0.0
                } else {
                    self.grid.weight(i) * v * g(self.grid.node(i))
                }
            })
            .sum()
    }

    /// `∫ self · other · density dx`.
    pub fn weighted_inner(&self, other: &GridFunction, density: &GridFunction) -> f64 {
        (0..self.grid.len())
            .map(|i| self.grid.weight(i) * self.values[i] * other.values[i] * density.values[i])
            .sum()
    }

    /// Cumulative trapezoid integral from the left edge.
    pub fn cumulative_integral(&self) -> Self {
        let h = self.grid.spacing();
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        Self::from_parts_unchecked(self.grid, out)
    }

    /// Linear interpolation; `None` outside the grid.
    pub fn interpolate(&self, x: f64) -> Option<f64> {
        let (i, t) = self.grid.locate(x)?;
        Some((1.0 - t) * self.values[i] + t * self.values[i + 1])
    }

    /// Nodal first derivative: central differences inside, second-order
    /// one-sided differences at the two ends.
    pub fn derivative(&self) -> Self {
        let h = self.grid.spacing();
        let u = &self.values;
        let n = u.len();
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            d[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
        }
        if n >= 3 {
            d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
            d[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
        }
        Self::from_parts_unchecked(self.grid, d)
    }

    /// Nodal second derivative, second order everywhere (one-sided four-point
    /// stencils at the ends when available).
    pub fn second_derivative(&self) -> Self {
        let h2 = self.grid.spacing().powi(2);
        let u = &self.values;
        let n = u.len();
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            d[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / h2;
        }
        if n >= 4 {
            d[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h2;
            d[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) / h2;
        } else {
            d[0] = d[1];
            d[n - 1] = d[n - 2];
        }
        Self::from_parts_unchecked(self.grid, d)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn interior_cell(&self, x: f64) -> Result<(usize, f64)> {
        match self.grid.locate(x) {
            Some((i, t)) if i >= 1 && i + 2 < self.grid.len() => Ok((i, t)),
            _ => Err(Error::GridBoundary { x }),
        }
    }

    fn central_d1(&self, i: usize) -> f64 {
        (self.values[i + 1] - self.values[i - 1]) / (2.0 * self.grid.spacing())
    }

    fn central_d2(&self, i: usize) -> f64 {
        (self.values[i + 1] - 2.0 * self.values[i] + self.values[i - 1]) / self.grid.spacing().powi(2)
    }
}

impl TestFunction for GridFunction {
    fn value(&self, x: f64) -> Result<f64> {
        self.interpolate(x).ok_or(Error::GridBoundary { x })
    }

    fn deriv(&self, x: f64) -> Result<f64> {
        let (i, t) = self.interior_cell(x)?;
        Ok((1.0 - t) * self.central_d1(i) + t * self.central_d1(i + 1))
    }

    fn second_deriv(&self, x: f64) -> Result<f64> {
        let (i, t) = self.interior_cell(x)?;
        Ok((1.0 - t) * self.central_d2(i) + t * self.central_d2(i + 1))
    }
}
