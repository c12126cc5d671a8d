//! Uniform grids: scalar paths on `[0, T]` and density fields on `[0,1]×[0,T]`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("a grid needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("grid horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("non-finite grid value at index {0}")]
    NonFinite(usize),
    #[error("field has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("grids are incompatible: {0}")]
    Incompatible(&'static str),
}

/// Trapezoid weights for `n + 1` equally spaced nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n + 1];
    w[0] = 0.5 * h;
    w[n] = 0.5 * h;
    w
}

/// Scalar function sampled at `tᵢ = i·T/N`, `i = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    horizon: f64,
    values: Vec<f64>,
}

impl GridPath {
    pub fn new(horizon: f64, values: Vec<f64>) -> Result<Self, GridError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GridError::BadHorizon(horizon));
        }
        if values.len() < 3 {
            return Err(GridError::TooFewSteps(values.len().saturating_sub(1)));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { horizon, values })
    }

    pub fn from_fn(horizon: f64, steps: usize, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        if steps < 2 {
            return Err(GridError::TooFewSteps(steps));
        }
        let h = horizon / steps as f64;
        Self::new(horizon, (0..=steps).map(|i| f(i as f64 * h)).collect())
    }

    pub fn zeros(horizon: f64, steps: usize) -> Result<Self, GridError> {
        Self::from_fn(horizon, steps, |_| 0.0)
    }

    /// Builds a path on the same grid as `self`.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != self.values.len() {
            return Err(GridError::ShapeMismatch { expected: self.values.len(), got: values.len() });
        }
        Self::new(self.horizon, values)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.horizon / self.steps() as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| self.time(i))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &GridPath) -> bool {
        self.values.len() == other.values.len() && self.horizon == other.horizon
    }

    /// Linear interpolation; `None` outside `[0, T]`.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return None;
        }
        let n = self.steps();
        let pos = t / self.step();
        let i = (pos as usize).min(n - 1);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        Some(self.values[i] + frac * (self.values[i + 1] - self.values[i]))
    }

    /// Trapezoid rule for `∫₀ᵀ values`.
    pub fn integral(&self) -> f64 {
        let h = self.step();
        let n = self.steps();
        let inner: f64 = self.values[1..n].iter().sum();
        h * (inner + 0.5 * (self.values[0] + self.values[n]))
    }

    /// Trapezoid rule for `∫₀ᵀ values²`.
    pub fn squared_integral(&self) -> f64 {
        let h = self.step();
        let n = self.steps();
        let inner: f64 = self.values[1..n].iter().map(|v| v * v).sum();
        h * (inner + 0.5 * (self.values[0].powi(2) + self.values[n].powi(2)))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `sup |self − other|` on a common grid.
    pub fn sup_distance(&self, other: &GridPath) -> Result<f64, GridError> {
        if !self.same_grid(other) {
            return Err(GridError::Incompatible("paths live on different grids"));
        }
        Ok(self.values.iter().zip(&other.values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Cumulative trapezoid integral `∫₀^{tᵢ}`, one value per node.
    pub fn cumulative_integral(&self) -> Vec<f64> {
        let h = self.step();
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// `∫₀^y` of the piecewise-linear interpolant, for `y ∈ [0, T]`.
    ///
    /// `cumulative` must be [`GridPath::cumulative_integral`] of `self`.
    pub fn integral_to(&self, cumulative: &[f64], y: f64) -> f64 {
        let y = y.clamp(0.0, self.horizon);
        let h = self.step();
        let n = self.steps();
        let pos = y / h;
        let a = (pos as usize).min(n - 1);
        let s = (pos - a as f64).clamp(0.0, 1.0);
        let (va, vb) = (self.values[a], self.values[a + 1]);
        cumulative[a] + h * (va * s + 0.5 * (vb - va) * s * s)
    }
}

/// Weights `(node, weight)` such that `Σ weight·v[node] = ∫₀^y v_lin` for the
/// piecewise-linear interpolant of nodal values on a uniform grid with `m`
/// cells and spacing `h`. `y` is clamped to `[0, m·h]`.
pub fn hat_weights_upto(m: usize, h: f64, y: f64, mut sink: impl FnMut(usize, f64)) {
    let y = y.clamp(0.0, m as f64 * h);
    let pos = y / h;
    let a = (pos as usize).min(m - 1);
    let s = (pos - a as f64).clamp(0.0, 1.0);
    // full cells [0, a]
    if a > 0 {
        sink(0, 0.5 * h);
        for j in 1..a {
            sink(j, h);
        }
        sink(a, 0.5 * h);
    }
    // partial cell [x_a, x_a + s h]
    sink(a, h * (s - 0.5 * s * s));
    sink(a + 1, h * 0.5 * s * s);
}

/// Density field on `x ∈ [0,1]` (`M+1` nodes) × `t ∈ [0,T]` (`N+1` nodes),
/// stored row-major in `t`: `values[j·(M+1) + a] = v(x_a, t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField2D {
    x_steps: usize,
    horizon: f64,
    t_steps: usize,
    values: Vec<f64>,
}

impl GridField2D {
    pub fn new(x_steps: usize, horizon: f64, t_steps: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if x_steps < 2 {
            return Err(GridError::TooFewSteps(x_steps));
        }
        if t_steps < 2 {
            return Err(GridError::TooFewSteps(t_steps));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GridError::BadHorizon(horizon));
        }
        let expected = (x_steps + 1) * (t_steps + 1);
        if values.len() != expected {
            return Err(GridError::ShapeMismatch { expected, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { x_steps, horizon, t_steps, values })
    }

    pub fn from_fn(x_steps: usize, horizon: f64, t_steps: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        if x_steps < 2 || t_steps < 2 {
            return Err(GridError::TooFewSteps(x_steps.min(t_steps)));
        }
        let dx = 1.0 / x_steps as f64;
        let dt = horizon / t_steps as f64;
        let mut values = Vec::with_capacity((x_steps + 1) * (t_steps + 1));
        for j in 0..=t_steps {
            for a in 0..=x_steps {
                values.push(f(a as f64 * dx, j as f64 * dt));
            }
        }
        Self::new(x_steps, horizon, t_steps, values)
    }

    pub fn zeros(x_steps: usize, horizon: f64, t_steps: usize) -> Result<Self, GridError> {
        Self::from_fn(x_steps, horizon, t_steps, |_, _| 0.0)
    }

    pub fn x_steps(&self) -> usize {
        self.x_steps
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn x_step(&self) -> f64 {
        1.0 / self.x_steps as f64
    }

    pub fn t_step(&self) -> f64 {
        self.horizon / self.t_steps as f64
    }

    pub fn x(&self, a: usize) -> f64 {
        a as f64 / self.x_steps as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.horizon / self.t_steps as f64
    }

    pub fn get(&self, a: usize, j: usize) -> f64 {
        self.values[j * (self.x_steps + 1) + a]
    }

    /// Row of x-values at time node `j`.
    pub fn row(&self, j: usize) -> &[f64] {
        let w = self.x_steps + 1;
        &self.values[j * w..(j + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Product trapezoid rule for `∬ v²`.
    pub fn squared_integral(&self) -> f64 {
        let wx = trapezoid_weights(self.x_steps, self.x_step());
        let wt = trapezoid_weights(self.t_steps, self.t_step());
        let mut acc = 0.0;
        for (j, wtj) in wt.iter().enumerate() {
            let row: f64 = self.row(j).iter().zip(&wx).map(|(v, w)| w * v * v).sum();
            acc += wtj * row;
        }
        acc
    }

    /// Trapezoid `∫₀¹ v(x, t_j) dx` for every time node.
    pub fn x_means(&self) -> Vec<f64> {
        let wx = trapezoid_weights(self.x_steps, self.x_step());
        (0..=self.t_steps).map(|j| self.row(j).iter().zip(&wx).map(|(v, w)| v * w).sum()).collect()
    }

    /// Subtracts the x-mean from every row so that `∫₀¹ v(x,t)dx = 0`.
    pub fn project_zero_x_mean(&self) -> Self {
        let means = self.x_means();
        let w = self.x_steps + 1;
        let values = self.values.iter().enumerate().map(|(idx, v)| v - means[idx / w]).collect();
        Self { values, ..self.clone() }
    }
}
