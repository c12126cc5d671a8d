//! Brute-force evaluation of the rate by minimum-norm quadratic programming.
//!
//! Given `q`, the path equation is affine in the controls, so
//! `I(q) = min ½‖u‖²_W subject to A u = r` with `u` the stacked nodal values
//! of `(ẇ⁰, ẇ, k̇)`, `W` the trapezoid weights of the energy and `A` the exact
//! matrix of [`control_forcing`](crate::paths::control_forcing) on the same
//! grids. The minimiser is `u* = W⁻¹Aᵀ(AW⁻¹Aᵀ)⁻¹r`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::dist::ServiceDist;
use crate::grid::{hat_weights_upto, trapezoid_weights, GridError, GridField2D, GridPath};
use crate::paths::{initial_forcing, path_defect, ControlSet, EndpointConstraints, ModelParams, PathsError};
use crate::renewal::Convolution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("path starts at {got}, expected q0 = {expected}")]
    InitialValue { got: f64, expected: f64 },
    #[error("normal equations could not be factorized even after regularization")]
    Singular,
    #[error("invalid oracle input: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Paths(#[from] PathsError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Layout of the stacked decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub x_steps: usize,
    pub t_steps: usize,
}

impl Layout {
    pub fn w0_len(&self) -> usize {
        self.x_steps + 1
    }

    pub fn w_offset(&self) -> usize {
        self.w0_len()
    }

    pub fn k_offset(&self) -> usize {
        self.w0_len() + self.t_steps + 1
    }

    /// Index of `k̇(x_a, τ_j)`.
    pub fn k_index(&self, a: usize, j: usize) -> usize {
        self.k_offset() + j * (self.x_steps + 1) + a
    }

    pub fn len(&self) -> usize {
        self.k_offset() + (self.x_steps + 1) * (self.t_steps + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSystem {
    pub layout: Layout,
    pub horizon: f64,
    pub mu: f64,
    /// One row per time node `t₁..t_N`, then the optional endpoint rows.
    pub a: DMatrix<f64>,
    pub r: DVector<f64>,
    /// Energy weights, strictly positive.
    pub weights: Vec<f64>,
    pub constraints: EndpointConstraints,
}

/// Matrix of the control contribution at every node `t₀..t_N` and the energy weights.
fn control_matrix(pm: &ModelParams, d: &ServiceDist, horizon: f64, layout: Layout) -> (DMatrix<f64>, Vec<f64>) {
    let n = layout.t_steps;
    let m = layout.x_steps;
    let h = horizon / n as f64;
    let dx = 1.0 / m as f64;
    let mut a = DMatrix::zeros(n + 1, layout.len());
    let survival: Vec<f64> = (0..=n).map(|j| d.survival_at(j as f64 * h)).collect();
    let cdf: Vec<f64> = (0..=n).map(|j| d.cdf_at(j as f64 * h)).collect();
    for i in 0..=n {
        let t = i as f64 * h;
        hat_weights_upto(m, dx, d.eq_cdf_at(t), |idx, w| a[(i, idx)] += w);
        if i == 0 {
            continue;
        }
        for j in 0..=i {
            let wt = if j == 0 || j == i { 0.5 * h } else { h };
            a[(i, layout.w_offset() + j)] += pm.sigma * wt * survival[i - j];
            hat_weights_upto(m, dx, cdf[i - j], |idx, w| a[(i, layout.k_index(idx, j))] += pm.mu * wt * w);
        }
    }
    let wx = trapezoid_weights(m, dx);
    let wt = trapezoid_weights(n, h);
    let wtau = trapezoid_weights(n, pm.mu * h);
    let mut weights = Vec::with_capacity(layout.len());
    weights.extend_from_slice(&wx);
    weights.extend_from_slice(&wt);
    for wj in &wtau {
        weights.extend(wx.iter().map(|w| w * wj));
    }
    (a, weights)
}

/// Builds the constrained minimum-norm problem for `q` with `x_steps` cells on `[0,1]`.
pub fn build_qp(
    q: &GridPath,
    pm: &ModelParams,
    d: &ServiceDist,
    x_steps: usize,
    constraints: EndpointConstraints,
) -> Result<QpSystem, OracleError> {
    if x_steps < 2 {
        return Err(OracleError::Invalid("at least two x cells are required"));
    }
    pm.check_dist(d)?;
    let q0 = q.values()[0];
    if (q0 - pm.q0).abs() > 1e-12 * (1.0 + pm.q0.abs()) {
        return Err(OracleError::InitialValue { got: q0, expected: pm.q0 });
    }
    let layout = Layout { x_steps, t_steps: q.steps() };
    let (full, weights) = control_matrix(pm, d, q.horizon(), layout);
    let defect = path_defect(q, pm, d)?;
    let n = q.steps();
    let extra = usize::from(constraints.bridge) + if constraints.kiefer { n + 1 } else { 0 };
    let rows = n + extra;
    let mut a = DMatrix::zeros(rows, layout.len());
    let mut r = DVector::zeros(rows);
    // the t = 0 row is identically zero and is dropped
    a.rows_mut(0, n).copy_from(&full.rows(1, n));
    r.rows_mut(0, n).copy_from(&DVector::from_column_slice(&defect.values()[1..]));
    let wx = trapezoid_weights(x_steps, 1.0 / x_steps as f64);
    let mut row = n;
    if constraints.bridge {
        for (idx, w) in wx.iter().enumerate() {
            a[(row, idx)] = *w;
        }
        row += 1;
    }
    if constraints.kiefer {
        for j in 0..=n {
            for (idx, w) in wx.iter().enumerate() {
                a[(row, layout.k_index(idx, j))] = *w;
            }
            row += 1;
        }
    }
    Ok(QpSystem { layout, horizon: q.horizon(), mu: pm.mu, a, r, weights, constraints })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormSolution {
    pub controls: ControlSet,
    /// `½‖u*‖²_W`.
    pub value: f64,
    /// `sup |Au* − r|`.
    pub residual: f64,
    /// Set when the normal equations needed a ridge to factorize.
    pub regularized: bool,
    /// `max/min` of the squared Cholesky pivots, a cheap conditioning estimate.
    pub pivot_ratio: f64,
}

/// Cholesky of an SPD matrix, with an increasing diagonal ridge on failure.
fn factor(g: DMatrix<f64>) -> Result<(Cholesky<f64, nalgebra::Dyn>, bool), OracleError> {
    if let Some(c) = g.clone().cholesky() {
        return Ok((c, false));
    }
    let scale = g.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut ridge = 1e-14 * scale;
    for _ in 0..12 {
        let mut reg = g.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        if let Some(c) = reg.cholesky() {
            return Ok((c, true));
        }
        ridge *= 10.0;
    }
    Err(OracleError::Singular)
}

/// Minimum-weighted-norm solution of `Au = r`.
pub fn solve_min_norm(sys: &QpSystem) -> Result<MinNormSolution, OracleError> {
    let layout = sys.layout;
    let mut scaled = sys.a.clone(); // A W⁻¹
    for (k, w) in sys.weights.iter().enumerate() {
        scaled.column_mut(k).scale_mut(1.0 / w);
    }
    let g = &scaled * sys.a.transpose();
    let g = (&g + g.transpose()) * 0.5;
    let (chol, regularized) = factor(g)?;
    let l = chol.l();
    let diag: Vec<f64> = l.diagonal().iter().map(|v| v * v).collect();
    let pivot_ratio = diag.iter().fold(0.0_f64, |m, v| m.max(*v)) / diag.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let lambda = chol.solve(&sys.r);
    let u = scaled.transpose() * &lambda;
    let residual = (&sys.a * &u - &sys.r).amax();
    let value = 0.5 * u.iter().zip(&sys.weights).map(|(u, w)| w * u * u).sum::<f64>();

    let m = layout.x_steps;
    let n = layout.t_steps;
    let w0 = GridPath::new(1.0, u.rows(0, m + 1).iter().copied().collect())?;
    let w = GridPath::new(sys.horizon, u.rows(layout.w_offset(), n + 1).iter().copied().collect())?;
    let k = GridField2D::new(m, sys.mu * sys.horizon, n, u.rows(layout.k_offset(), (m + 1) * (n + 1)).iter().copied().collect())?;
    let mut controls = ControlSet::new(w0, w, k)?;
    controls.constraints = sys.constraints;
    Ok(MinNormSolution { controls, value, residual, regularized, pivot_ratio })
}

/// Oracle value of `I(q)` with the given endpoint constraints.
pub fn oracle_rate(
    q: &GridPath,
    pm: &ModelParams,
    d: &ServiceDist,
    x_steps: usize,
    constraints: EndpointConstraints,
) -> Result<MinNormSolution, OracleError> {
    solve_min_norm(&build_qp(q, pm, d, x_steps, constraints)?)
}

/// Which nodes are assumed to have `q > 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignPattern(pub Vec<bool>);

impl SignPattern {
    pub fn from_path(q: &GridPath) -> Self {
        Self(q.values().iter().map(|v| *v > 1e-9).collect())
    }

    pub fn all(positive: bool, steps: usize) -> Self {
        Self(vec![positive; steps + 1])
    }

    /// Relabels from `q`, keeping the previous label where `|q| ≤ 1e−9`.
    pub fn update(&self, q: &[f64]) -> Self {
        Self(q.iter().zip(&self.0).map(|(v, prev)| if v.abs() <= 1e-9 { *prev } else { *v > 0.0 }).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalRate {
    pub value: f64,
    /// The pattern reproduced itself before the iteration cap.
    pub stable: bool,
    pub iterations: usize,
    pub path: GridPath,
    pub pattern: SignPattern,
}

/// Smallest energy of a path with `q(t) = a`, over controls on `[0, t]`, for
/// the sign pattern found by iterating from `initial`.
///
/// Experimental: with a fixed pattern the problem is a single-constraint
/// least-norm problem, but the pattern iteration has no convexity guarantee.
#[allow(clippy::too_many_arguments)]
pub fn min_rate_terminal(
    a: f64,
    t: f64,
    pm: &ModelParams,
    d: &ServiceDist,
    steps: usize,
    x_steps: usize,
    initial: &SignPattern,
    max_iterations: usize,
) -> Result<TerminalRate, OracleError> {
    if !(t > 0.0 && t.is_finite()) || !a.is_finite() {
        return Err(OracleError::Invalid("terminal time must be positive and the level finite"));
    }
    if initial.0.len() != steps + 1 {
        return Err(OracleError::Invalid("sign pattern length must be steps + 1"));
    }
    pm.check_dist(d)?;
    let layout = Layout { x_steps, t_steps: steps };
    let (b, weights) = control_matrix(pm, d, t, layout);
    let base = initial_forcing(pm, d, t, steps)?;
    let conv = Convolution::new(d, steps, t / steps as f64);
    let base = DVector::from_column_slice(base.values());

    let mut pattern = initial.clone();
    let mut iterations = 0;
    loop {
        iterations += 1;
        // M = I − C_S, lower triangular
        let mut mat = DMatrix::identity(steps + 1, steps + 1);
        for i in 1..=steps {
            for mm in 0..=i {
                if pattern.0[mm] {
                    mat[(i, mm)] -= conv.weight(i, i - mm);
                }
            }
        }
        let mut e = DVector::zeros(steps + 1);
        e[steps] = 1.0;
        let z = mat.transpose().solve_upper_triangular(&e).ok_or(OracleError::Singular)?;
        let free = mat.solve_lower_triangular(&base).ok_or(OracleError::Singular)?;
        let g = b.transpose() * &z;
        let c = a - free[steps];
        let gwg: f64 = g.iter().zip(&weights).map(|(g, w)| g * g / w).sum();
        let (u, value) = if c == 0.0 {
            (DVector::zeros(g.len()), 0.0)
        } else if gwg <= 0.0 {
            return Err(OracleError::Singular);
        } else {
            let s = c / gwg;
            (DVector::from_iterator(g.len(), g.iter().zip(&weights).map(|(g, w)| s * g / w)), 0.5 * c * c / gwg)
        };
        let q = mat.solve_lower_triangular(&(&base + &b * &u)).ok_or(OracleError::Singular)?;
        let next = pattern.update(q.as_slice());
        let stable = next == pattern;
        if stable || iterations >= max_iterations {
            return Ok(TerminalRate { value, stable, iterations, path: GridPath::new(t, q.iter().copied().collect())?, pattern: next });
        }
        pattern = next;
    }
}

/// One case of the standard exponential battery.
#[derive(Debug, Clone)]
pub struct BatteryCase {
    pub name: &'static str,
    pub beta: f64,
    pub q0: f64,
    pub path: fn(f64) -> f64,
}

fn case_hump(t: f64) -> f64 {
    0.3 * t * (2.0 - t)
}

fn case_sine(t: f64) -> f64 {
    0.2 * (core::f64::consts::FRAC_PI_2 * t).sin() * t
}

fn case_decay(t: f64) -> f64 {
    0.5 * (1.0 + t) * (1.0 - 0.5 * t).powi(2)
}

fn case_rise(t: f64) -> f64 {
    let s = 0.5 * t;
    -0.5 + 0.8 * s * s * (3.0 - 2.0 * s)
}

/// Five `(β, q₀, q)` cases on `[0, 2]` for exponential(1) service and `σ = 1`.
pub fn standard_battery() -> Vec<BatteryCase> {
    vec![
        BatteryCase { name: "hump", beta: 0.5, q0: 0.0, path: case_hump },
        BatteryCase { name: "sine", beta: 0.0, q0: 0.0, path: case_sine },
        BatteryCase { name: "decay", beta: 1.0, q0: 0.5, path: case_decay },
        BatteryCase { name: "hump-negative-beta", beta: -0.5, q0: 0.0, path: case_hump },
        BatteryCase { name: "rise", beta: 0.0, q0: -0.5, path: case_rise },
    ]
}

impl BatteryCase {
    pub const HORIZON: f64 = 2.0;

    pub fn params(&self) -> ModelParams {
        ModelParams::new(1.0, 1.0, self.beta, self.q0).expect("valid battery parameters")
    }

    pub fn grid_path(&self, steps: usize) -> GridPath {
        GridPath::from_fn(Self::HORIZON, steps, self.path).expect("finite battery path")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fredholm::{evaluate_rate, RateOptions};
    use crate::paths::{control_forcing, forward_q};
    use crate::renewal::RenewalOptions;

    fn exp1() -> ServiceDist {
        ServiceDist::exponential(1.0).unwrap()
    }

    #[test]
    fn zero_problem() {
        let pm = ModelParams::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let q = GridPath::zeros(2.0, 20).unwrap();
        let sys = build_qp(&q, &pm, &exp1(), 8, EndpointConstraints::default()).unwrap();
        assert_eq!(sys.r.amax(), 0.0);
        let sol = solve_min_norm(&sys).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.controls.energy(), 0.0);
    }

    #[test]
    fn matrix_reproduces_control_forcing() {
        let d = ServiceDist::erlang(2, 1.0).unwrap();
        let pm = ModelParams::new(1.0, 0.7, 0.0, 0.0).unwrap();
        let layout = Layout { x_steps: 8, t_steps: 30 };
        let (a, _) = control_matrix(&pm, &d, 3.0, layout);
        let w0 = GridPath::from_fn(1.0, 8, |x| (3.0 * x).sin()).unwrap();
        let w = GridPath::from_fn(3.0, 30, |t| 1.0 - t).unwrap();
        let k = GridField2D::from_fn(8, 3.0, 30, |x, t| x * x - 0.2 * t).unwrap();
        let c = ControlSet::new(w0, w, k).unwrap();
        let direct = control_forcing(&c, &pm, &d).unwrap();
        let mut u = c.w0_dot.values().to_vec();
        u.extend_from_slice(c.w_dot.values());
        u.extend_from_slice(c.k_dot.values());
        let via = &a * DVector::from_vec(u);
        for (x, y) in via.iter().zip(direct.values()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn forward_round_trip_is_feasible() {
        let pm = ModelParams::new(1.0, 1.0, 0.3, 0.2).unwrap();
        let d = exp1();
        let w0 = GridPath::from_fn(1.0, 8, |x| x - 0.5).unwrap();
        let w = GridPath::from_fn(2.0, 40, |t| (2.0 * t).cos()).unwrap();
        let k = GridField2D::from_fn(8, 2.0, 40, |x, t| 0.3 * x * t).unwrap();
        let c = ControlSet::new(w0, w, k).unwrap();
        let q = forward_q(&c, &pm, &d, &RenewalOptions::default()).unwrap();
        let sys = build_qp(&q, &pm, &d, 8, EndpointConstraints::default()).unwrap();
        let mut u = c.w0_dot.values().to_vec();
        u.extend_from_slice(c.w_dot.values());
        u.extend_from_slice(c.k_dot.values());
        let res = (&sys.a * DVector::from_vec(u) - &sys.r).amax();
        assert!(res < 1e-8, "{res}");
        // and the minimiser is no more expensive than the generating controls
        let sol = solve_min_norm(&sys).unwrap();
        assert!(sol.value <= c.energy() + 1e-12);
        assert!(sol.residual < 1e-9);
    }

    #[test]
    fn agrees_with_fredholm_on_hump() {
        let case = &standard_battery()[0];
        let pm = case.params();
        let d = exp1();
        let q = case.grid_path(200);
        let oracle = oracle_rate(&q, &pm, &d, 32, EndpointConstraints::default()).unwrap();
        let fred = evaluate_rate(&q, &pm, &d, &RateOptions::default()).unwrap();
        let rel = (oracle.value - fred.rate).abs() / fred.rate;
        assert!(rel <= 0.02, "oracle {} fredholm {} rel {rel}", oracle.value, fred.rate);
    }

    #[test]
    fn flags_only_raise_the_value() {
        let case = &standard_battery()[2];
        let pm = case.params();
        let d = exp1();
        let q = case.grid_path(60);
        let off = oracle_rate(&q, &pm, &d, 8, EndpointConstraints::default()).unwrap();
        let bridge = oracle_rate(&q, &pm, &d, 8, EndpointConstraints { bridge: true, kiefer: false }).unwrap();
        let both = oracle_rate(&q, &pm, &d, 8, EndpointConstraints { bridge: true, kiefer: true }).unwrap();
        assert!(bridge.value >= off.value - 1e-12);
        assert!(both.value >= bridge.value - 1e-12);
        assert!(both.controls.bridge_endpoint().abs() < 1e-9);
        assert!(both.controls.kiefer_endpoint() < 1e-9);
        let again = oracle_rate(&q, &pm, &d, 8, EndpointConstraints { bridge: true, kiefer: true }).unwrap();
        assert_eq!(again.value.to_bits(), both.value.to_bits());
    }

    #[test]
    fn refinement_changes_little() {
        let case = &standard_battery()[1];
        let pm = case.params();
        let d = exp1();
        let coarse = oracle_rate(&case.grid_path(100), &pm, &d, 16, EndpointConstraints::default()).unwrap();
        let fine = oracle_rate(&case.grid_path(200), &pm, &d, 16, EndpointConstraints::default()).unwrap();
        assert!((coarse.value - fine.value).abs() <= 0.01 * fine.value);
    }

    #[test]
    fn terminal_zero_level() {
        let pm = ModelParams::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let r = min_rate_terminal(0.0, 1.0, &pm, &exp1(), 40, 8, &SignPattern::all(false, 40), 50).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.stable);
    }

    #[test]
    fn terminal_monotone_and_below_hand_built_paths() {
        let pm = ModelParams::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let d = exp1();
        let mut last = 0.0;
        for a in [0.1, 0.2, 0.4, 0.8] {
            let r = min_rate_terminal(a, 1.0, &pm, &d, 40, 8, &SignPattern::all(true, 40), 50).unwrap();
            assert!(r.stable);
            assert!(r.value >= last);
            last = r.value;
            let linear = GridPath::from_fn(1.0, 40, |t| a * t).unwrap();
            let hand = oracle_rate(&linear, &pm, &d, 8, EndpointConstraints::default()).unwrap();
            assert!(r.value <= hand.value + 1e-12, "a {a}: {} vs {}", r.value, hand.value);
        }
        let neg = min_rate_terminal(-0.4, 1.0, &pm, &d, 40, 8, &SignPattern::all(false, 40), 50).unwrap();
        let pos = min_rate_terminal(-0.2, 1.0, &pm, &d, 40, 8, &SignPattern::all(false, 40), 50).unwrap();
        assert!(neg.value >= pos.value);
    }
}
