//! Control densities, their energy, the forward map controls → queue path and
//! the Kiefer/Brownian-sheet transform.
//!
//! The controls are the densities `ẇ⁰` on `x ∈ [0,1]`, `ẇ` on `t ∈ [0,T]` and
//! `k̇` on `(x, τ) ∈ [0,1]×[0, μT]`, where `τ = μs` is the time argument of the
//! Kiefer density. Given controls, the centred queue path solves
//!
//! ```text
//! q(t) = (1−F(t))q₀⁺ − (1−F₀(t))q₀⁻ − βF₀(t) + ∫₀ᵗ q(t−s)⁺ dF(s)
//!        + w⁰(F₀(t)) + ∫₀ᵗ (1−F(t−s)) σ ẇ(s) ds + ∫₀ᵗ ∫₀^{F(t−s)} k̇(x, μs) dx μ ds
//! ```
//!
//! with `w⁰(y) = ∫₀^y ẇ⁰`.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use thiserror::Error;

use crate::dist::ServiceDist;
use crate::grid::{trapezoid_weights, GridError, GridField2D, GridPath};
use crate::quad::GaussLegendre;
use crate::renewal::{self, Convolution, RenewalError, RenewalOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathsError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(&'static str),
    #[error("incompatible inputs: {0}")]
    Incompatible(&'static str),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Renewal(#[from] RenewalError),
}

/// The limit-regime quadruple `(μ, σ, β, q₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    pub sigma: f64,
    pub beta: f64,
    pub q0: f64,
}

impl ModelParams {
    pub fn new(mu: f64, sigma: f64, beta: f64, q0: f64) -> Result<Self, PathsError> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(PathsError::InvalidParams("mu must be positive and finite"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(PathsError::InvalidParams("sigma must be positive and finite"));
        }
        if !beta.is_finite() || !q0.is_finite() {
            return Err(PathsError::InvalidParams("beta and q0 must be finite"));
        }
        Ok(Self { mu, sigma, beta, q0 })
    }

    /// Parameters whose `μ` is the mean rate of `d`.
    pub fn for_dist(d: &ServiceDist, sigma: f64, beta: f64, q0: f64) -> Result<Self, PathsError> {
        Self::new(d.mean_rate(), sigma, beta, q0)
    }

    pub fn q0_plus(&self) -> f64 {
        self.q0.max(0.0)
    }

    pub fn q0_minus(&self) -> f64 {
        (-self.q0).max(0.0)
    }

    /// Rejects a service law whose mean rate differs from `μ`.
    pub fn check_dist(&self, d: &ServiceDist) -> Result<(), PathsError> {
        if (self.mu - d.mean_rate()).abs() > 1e-12 * self.mu.max(1.0) {
            return Err(PathsError::Incompatible("mu differs from the service-time mean rate"));
        }
        Ok(())
    }
}

/// Which endpoint (zero-mean) constraints a control set was built under.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EndpointConstraints {
    /// `∫₀¹ ẇ⁰ dx = 0`, i.e. `w⁰(1) = 0`.
    pub bridge: bool,
    /// `∫₀¹ k̇(x,τ) dx = 0` for every `τ`, i.e. `k(1,τ) = 0`.
    pub kiefer: bool,
}

/// The control densities `(ẇ⁰, ẇ, k̇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub w0_dot: GridPath,
    pub w_dot: GridPath,
    pub k_dot: GridField2D,
    pub constraints: EndpointConstraints,
}

impl ControlSet {
    pub fn new(w0_dot: GridPath, w_dot: GridPath, k_dot: GridField2D) -> Result<Self, PathsError> {
        if (w0_dot.horizon() - 1.0).abs() > 1e-12 {
            return Err(PathsError::Incompatible("the bridge density lives on [0, 1]"));
        }
        if k_dot.t_steps() != w_dot.steps() {
            return Err(PathsError::Incompatible("the Kiefer density must share the time steps of the Wiener density"));
        }
        Ok(Self { w0_dot, w_dot, k_dot, constraints: EndpointConstraints::default() })
    }

    /// All-zero controls on `[0, horizon]` with `steps` time steps and `x_steps`
    /// steps on `[0,1]`.
    pub fn zeros(pm: &ModelParams, horizon: f64, steps: usize, x_steps: usize) -> Result<Self, PathsError> {
        Self::new(GridPath::zeros(1.0, x_steps)?, GridPath::zeros(horizon, steps)?, GridField2D::zeros(x_steps, pm.mu * horizon, steps)?)
    }

    /// `½(∫ẇ⁰² + ∫ẇ² + ∬k̇²)` by trapezoid quadrature.
    pub fn energy(&self) -> f64 {
        0.5 * (self.w0_dot.squared_integral() + self.w_dot.squared_integral() + self.k_dot.squared_integral())
    }

    /// `w⁰(1) = ∫₀¹ ẇ⁰`.
    pub fn bridge_endpoint(&self) -> f64 {
        self.w0_dot.integral()
    }

    /// `sup_τ |k(1,τ)|`, i.e. the largest `|∫₀¹ k̇(x,τ)dx|`.
    pub fn kiefer_endpoint(&self) -> f64 {
        self.k_dot.x_means().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// The same controls with both zero-mean endpoint conditions imposed by
    /// subtracting means.
    pub fn projected(&self) -> Self {
        let m = self.bridge_endpoint();
        let w0 = self.w0_dot.with_values(self.w0_dot.values().iter().map(|v| v - m).collect()).expect("finite");
        Self {
            w0_dot: w0,
            w_dot: self.w_dot.clone(),
            k_dot: self.k_dot.project_zero_x_mean(),
            constraints: EndpointConstraints { bridge: true, kiefer: true },
        }
    }

    fn check_against(&self, pm: &ModelParams) -> Result<(), PathsError> {
        let want = pm.mu * self.w_dot.horizon();
        if (self.k_dot.horizon() - want).abs() > 1e-9 * want {
            return Err(PathsError::Incompatible("the Kiefer density must cover τ ∈ [0, μT]"));
        }
        Ok(())
    }
}

/// `(1−F(t))q₀⁺ − (1−F₀(t))q₀⁻ − βF₀(t)` on the grid `[0, horizon]`.
pub fn initial_forcing(pm: &ModelParams, d: &ServiceDist, horizon: f64, steps: usize) -> Result<GridPath, GridError> {
    let (qp, qm) = (pm.q0_plus(), pm.q0_minus());
    GridPath::from_fn(horizon, steps, |t| d.survival_at(t) * qp - d.eq_survival_at(t) * qm - pm.beta * d.eq_cdf_at(t))
}

/// The control contribution to the path equation:
/// `w⁰(F₀(t)) + ∫₀ᵗ(1−F(t−s))σẇ(s)ds + ∫₀ᵗ∫₀^{F(t−s)}k̇(x,μs)dx μds`.
///
/// The inner x-integral integrates the piecewise-linear interpolant of `k̇`
/// exactly up to the moving boundary `x = F(t−s)`.
pub fn control_forcing(c: &ControlSet, pm: &ModelParams, d: &ServiceDist) -> Result<GridPath, PathsError> {
    c.check_against(pm)?;
    let n = c.w_dot.steps();
    let h = c.w_dot.step();
    let w0_cum = c.w0_dot.cumulative_integral();
    let k_rows: Vec<(GridPath, Vec<f64>)> = (0..=n)
        .map(|j| {
            let row = GridPath::new(1.0, c.k_dot.row(j).to_vec()).expect("finite row");
            let cum = row.cumulative_integral();
            (row, cum)
        })
        .collect();
    let survival: Vec<f64> = (0..=n).map(|j| d.survival_at(j as f64 * h)).collect();
    let cdf: Vec<f64> = (0..=n).map(|j| d.cdf_at(j as f64 * h)).collect();
    let wd = c.w_dot.values();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = i as f64 * h;
        let mut v = c.w0_dot.integral_to(&w0_cum, d.eq_cdf_at(t));
        if i > 0 {
            let mut wiener = 0.0;
            let mut kiefer = 0.0;
            for j in 0..=i {
                let wt = if j == 0 || j == i { 0.5 * h } else { h };
                wiener += wt * survival[i - j] * wd[j];
                let (row, cum) = &k_rows[j];
                kiefer += wt * row.integral_to(cum, cdf[i - j]);
            }
            v += pm.sigma * wiener + pm.mu * kiefer;
        }
        out.push(v);
    }
    Ok(c.w_dot.with_values(out)?)
}

/// Solves the path equation for `q` given the controls.
pub fn forward_q(c: &ControlSet, pm: &ModelParams, d: &ServiceDist, opts: &RenewalOptions) -> Result<GridPath, PathsError> {
    pm.check_dist(d)?;
    let ctrl = control_forcing(c, pm, d)?;
    let base = initial_forcing(pm, d, ctrl.horizon(), ctrl.steps())?;
    let f = ctrl.with_values(base.values().iter().zip(ctrl.values()).map(|(a, b)| a + b).collect())?;
    Ok(renewal::solve_nonlinear(&f, d, opts)?.path)
}

/// The control-free defect `q − [(1−F)q₀⁺ − (1−F₀)q₀⁻ − βF₀ + ∫q⁺dF]` of a path;
/// it equals the control contribution whenever `q` solves the path equation.
pub fn path_defect(q: &GridPath, pm: &ModelParams, d: &ServiceDist) -> Result<GridPath, PathsError> {
    let base = initial_forcing(pm, d, q.horizon(), q.steps())?;
    let conv = Convolution::for_path(d, q).apply_positive(q.values());
    let v = q.values().iter().zip(base.values()).zip(&conv).map(|((q, b), c)| q - b - c).collect();
    Ok(q.with_values(v)?)
}

/// The law-of-large-numbers path: the solution with zero controls.
pub fn lln_path(pm: &ModelParams, d: &ServiceDist, horizon: f64, steps: usize, opts: &RenewalOptions) -> Result<GridPath, PathsError> {
    let f = initial_forcing(pm, d, horizon, steps)?;
    Ok(renewal::solve_nonlinear(&f, d, opts)?.path)
}

/// Kiefer field `k` obtained from a Brownian-sheet density `ḃ` through
/// `k(x,t) = −∫₀ˣ k(y,t)/(1−y) dy + b(x,t)`, whose solution is
/// `k(x,t) = (1−x)∫₀ˣ b_y(y,t)/(1−y) dy` with `b_y(y,t) = ∫₀ᵗ ḃ(y,s) ds`.
///
/// `ḃ` is taken piecewise linear in `x` between nodes; the `1/(1−y)` factor is
/// integrated exactly on each cell.
#[derive(Debug, Clone)]
pub struct KieferTransform {
    sheet: GridField2D,
    k: GridField2D,
}

/// `∫_{x_a}^{y} v(z)/(1−z) dz` for `v` linear on `[x_a, x_a + dx]` with end values
/// `va`, `vb`; `y < 1`.
fn cell_log_integral(va: f64, vb: f64, xa: f64, dx: f64, y: f64) -> f64 {
    let slope = (vb - va) / dx;
    let level = va + slope * (1.0 - xa);
    level * ((1.0 - xa) / (1.0 - y)).ln() - slope * (y - xa)
}

pub fn kiefer_from_sheet(b: &GridField2D) -> KieferTransform {
    let m = b.x_steps();
    let n = b.t_steps();
    let dx = b.x_step();
    let mut values = Vec::with_capacity((m + 1) * (n + 1));
    // b_y(·, t_j) by trapezoid in t, accumulated row by row
    let mut by = alloc::vec![0.0; m + 1];
    for j in 0..=n {
        if j > 0 {
            let (prev, cur) = (b.row(j - 1), b.row(j));
            let h = b.t_step();
            for a in 0..=m {
                by[a] += 0.5 * h * (prev[a] + cur[a]);
            }
        }
        let mut acc = 0.0;
        for a in 0..=m {
            let x = a as f64 * dx;
            if a == m {
                values.push(0.0);
            } else {
                values.push((1.0 - x) * acc);
                acc += cell_log_integral(by[a], by[a + 1], x, dx, x + dx);
            }
        }
    }
    let k = GridField2D::new(m, b.horizon(), n, values).expect("finite transform");
    KieferTransform { sheet: b.clone(), k }
}

impl KieferTransform {
    pub fn sheet(&self) -> &GridField2D {
        &self.sheet
    }

    /// `k` at the grid nodes, with `k(1,t) = 0`.
    pub fn k(&self) -> &GridField2D {
        &self.k
    }

    /// `k̇(x, t_j) = ḃ(x, t_j) − ∫₀ˣ ḃ(y, t_j)/(1−y) dy` for `x < 1`.
    pub fn k_dot_at(&self, x: f64, j: usize) -> f64 {
        let row = self.sheet.row(j);
        let m = self.sheet.x_steps();
        let dx = self.sheet.x_step();
        let a = ((x / dx) as usize).min(m - 1);
        let mut integral = 0.0;
        for c in 0..a {
            integral += cell_log_integral(row[c], row[c + 1], c as f64 * dx, dx, (c + 1) as f64 * dx);
        }
        let xa = a as f64 * dx;
        integral += cell_log_integral(row[a], row[a + 1], xa, dx, x);
        let s = (x - xa) / dx;
        row[a] + s * (row[a + 1] - row[a]) - integral
    }

    /// `∬ k̇²`, Gauss–Legendre per cell with geometric grading into the
    /// logarithmic singularity at `x = 1`, trapezoid in `t`.
    pub fn energy(&self) -> f64 {
        let gl = GaussLegendre::new(8);
        let m = self.sheet.x_steps();
        let n = self.sheet.t_steps();
        let dx = self.sheet.x_step();
        let wt = trapezoid_weights(n, self.sheet.t_step());
        let mut total = 0.0;
        for (j, w) in wt.iter().enumerate() {
            let row = self.sheet.row(j);
            let mut before = 0.0; // ∫₀^{x_c} ḃ/(1−y)
            let mut acc = 0.0;
            for c in 0..m {
                let xa = c as f64 * dx;
                let (va, vb) = (row[c], row[c + 1]);
                let kd = |x: f64| {
                    let s = (x - xa) / dx;
                    va + s * (vb - va) - before - cell_log_integral(va, vb, xa, dx, x)
                };
                if c + 1 < m {
                    acc += gl.integrate(xa, xa + dx, |x| kd(x).powi(2));
                    before += cell_log_integral(va, vb, xa, dx, xa + dx);
                } else {
                    let mut lo = xa;
                    let mut width = dx;
                    for _ in 0..40 {
                        width *= 0.5;
                        acc += gl.integrate(lo, lo + width, |x| kd(x).powi(2));
                        lo += width;
                    }
                }
            }
            total += w * acc;
        }
        total
    }

    /// `∬ ḃ²` of the piecewise-linear sheet density (exact in `x`, trapezoid in `t`).
    pub fn sheet_energy(&self) -> f64 {
        let m = self.sheet.x_steps();
        let n = self.sheet.t_steps();
        let dx = self.sheet.x_step();
        let wt = trapezoid_weights(n, self.sheet.t_step());
        wt.iter()
            .enumerate()
            .map(|(j, w)| {
                let row = self.sheet.row(j);
                w * (0..m).map(|c| dx * (row[c].powi(2) + row[c] * row[c + 1] + row[c + 1].powi(2)) / 3.0).sum::<f64>()
            })
            .sum()
    }
}
