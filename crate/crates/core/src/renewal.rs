//! Linear and nonlinear renewal equations on a uniform grid.
//!
//! The nonlinear equation `g(t) = f(t) + ∫₀ᵗ g(t−s)⁺ dF(s)` is solved by Picard
//! iteration `g₀ = f`, `g_k = f + ∫ g_{k−1}⁺ dF`. On `[0, t₀]` the Picard map is a
//! contraction with factor `F(t₀)`, so the horizon is split into windows of
//! `F`-mass at most [`RenewalOptions::window_mass`] and the iteration restarts on
//! each window with the already solved past folded into the forcing.
//!
//! The convolution is discretized with the trapezoid rule. Forcings with jumps
//! are accepted as grid samples, although the theory (absolute continuity of
//! `g`) assumes an absolutely continuous `f`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use thiserror::Error;

use crate::dist::ServiceDist;
use crate::grid::{GridError, GridPath};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenewalError {
    #[error("Picard iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewalOptions {
    /// Stop when the sup-norm change of a Picard step is at most this.
    pub tolerance: f64,
    /// Hard cap on Picard steps per window.
    pub max_iterations: usize,
    /// Largest `F`-mass of one Picard window.
    pub window_mass: f64,
}

impl Default for RenewalOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 5_000, window_mass: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenewalSolution {
    pub path: GridPath,
    /// Total Picard steps over all windows (0 for the direct linear solve).
    pub iterations: usize,
    pub windows: usize,
    /// `sup |g − f − ∫g(⁺)dF|` on the grid.
    pub residual: f64,
}

/// Trapezoid convolution `∫₀^{tᵢ} g(tᵢ − s) F'(s) ds` on a fixed grid.
#[derive(Debug, Clone)]
pub struct Convolution {
    step: f64,
    density: Vec<f64>,
}

impl Convolution {
    pub fn new(d: &ServiceDist, steps: usize, step: f64) -> Self {
        let density = (0..=steps).map(|j| d.pdf_at(j as f64 * step)).collect();
        Self { step, density }
    }

    pub fn for_path(d: &ServiceDist, path: &GridPath) -> Self {
        Self::new(d, path.steps(), path.step())
    }

    /// Density samples `F'(jΔt)`.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Quadrature weight of the lag `j` in the convolution evaluated at node `i`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == 0 {
            0.0
        } else if j == 0 || j == i {
            0.5 * self.step * self.density[j]
        } else {
            self.step * self.density[j]
        }
    }

    /// `∫₀^{tᵢ} g(tᵢ − s) F'(s) ds` with `g` given through `value(k)` at nodes.
    #[inline]
    pub fn at(&self, i: usize, value: impl Fn(usize) -> f64) -> f64 {
        (0..=i).map(|j| self.weight(i, j) * value(i - j)).sum()
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        (0..g.len()).map(|i| self.at(i, |k| g[k])).collect()
    }

    pub fn apply_positive(&self, g: &[f64]) -> Vec<f64> {
        (0..g.len()).map(|i| self.at(i, |k| positive_part(g[k]))).collect()
    }
}

/// `x⁺`, with values within `1e−12` of zero treated as zero.
#[inline]
pub fn positive_part(x: f64) -> f64 {
    if x > 1e-12 {
        x
    } else {
        0.0
    }
}

/// `∫₀^{tᵢ} g(tᵢ − s) dF(s)` on the grid of `g`.
pub fn convolve(g: &GridPath, d: &ServiceDist) -> GridPath {
    let conv = Convolution::for_path(d, g);
    g.with_values(conv.apply(g.values())).expect("convolution of a finite path is finite")
}

/// `sup |g − f − ∫ g dF|` (or with `g⁺` when `positive` is set).
pub fn residual(g: &GridPath, f: &GridPath, d: &ServiceDist, positive: bool) -> Result<f64, RenewalError> {
    if !g.same_grid(f) {
        return Err(GridError::Incompatible("g and f live on different grids").into());
    }
    let conv = Convolution::for_path(d, g);
    let cg = if positive { conv.apply_positive(g.values()) } else { conv.apply(g.values()) };
    Ok(g.values().iter().zip(f.values()).zip(&cg).fold(0.0_f64, |m, ((g, f), c)| m.max((g - f - c).abs())))
}

/// Solves `g = f + ∫₀ᵗ g(t−s) dF(s)` by forward marching on the trapezoid
/// discretization (the discrete system is lower triangular).
pub fn solve_linear(f: &GridPath, d: &ServiceDist) -> Result<RenewalSolution, RenewalError> {
    let conv = Convolution::for_path(d, f);
    let n = f.steps();
    let fv = f.values();
    let diag = 1.0 - conv.weight(1, 0);
    let mut g = vec![0.0; n + 1];
    g[0] = fv[0];
    for i in 1..=n {
        let past: f64 = (1..=i).map(|j| conv.weight(i, j) * g[i - j]).sum();
        g[i] = (fv[i] + past) / diag;
    }
    let path = f.with_values(g)?;
    let residual = residual(&path, f, d, false)?;
    Ok(RenewalSolution { path, iterations: 0, windows: 1, residual })
}

/// Solves `g = f + ∫₀ᵗ g(t−s)⁺ dF(s)` by windowed Picard iteration.
pub fn solve_nonlinear(f: &GridPath, d: &ServiceDist, opts: &RenewalOptions) -> Result<RenewalSolution, RenewalError> {
    let conv = Convolution::for_path(d, f);
    let n = f.steps();
    let h = f.step();
    let fv = f.values();

    let window_time = d.quantile(opts.window_mass.clamp(1e-6, 0.999)).unwrap_or(f.horizon());
    let width = ((window_time / h).floor() as usize).clamp(1, n);
    // contraction factor on one window, used for the iteration budget
    let factor = d.cdf_at(width as f64 * h).max(conv.weight(1, 0)).clamp(1e-3, 0.999_999);
    let budget = (10.0 * (opts.tolerance.ln() / factor.ln()).ceil()).max(10.0) as usize;
    let budget = budget.min(opts.max_iterations);

    let mut g = fv.to_vec();
    let mut total_iterations = 0;
    let mut windows = 0;
    let mut start = 1;
    while start <= n {
        let end = (start + width - 1).min(n);
        windows += 1;
        // contribution of the solved past (nodes < start), fixed during the window
        let history: Vec<f64> =
            (start..=end).map(|i| ((i - start + 1)..=i).map(|j| conv.weight(i, j) * positive_part(g[i - j])).sum()).collect();
        let mut converged = false;
        let mut next = vec![0.0; end - start + 1];
        for _ in 0..budget {
            total_iterations += 1;
            for (slot, i) in (start..=end).enumerate() {
                let current: f64 = (0..=(i - start)).map(|j| conv.weight(i, j) * positive_part(g[i - j])).sum();
                next[slot] = fv[i] + history[slot] + current;
            }
            let change = next.iter().zip(&g[start..=end]).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            g[start..=end].copy_from_slice(&next);
            if change <= opts.tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            let path = f.with_values(g)?;
            let residual = residual(&path, f, d, true)?;
            return Err(RenewalError::NotConverged { residual, iterations: total_iterations });
        }
        start = end + 1;
    }
    let path = f.with_values(g)?;
    let residual = residual(&path, f, d, true)?;
    Ok(RenewalSolution { path, iterations: total_iterations, windows, residual })
}

/// The first `count` global Picard iterates `g₀ = f, g₁, …` over the whole grid,
/// without windowing. Used to inspect the contraction rate.
pub fn picard_iterates(f: &GridPath, d: &ServiceDist, count: usize) -> Vec<GridPath> {
    let conv = Convolution::for_path(d, f);
    let mut out = Vec::with_capacity(count);
    let mut g = f.values().to_vec();
    out.push(f.clone());
    for _ in 1..count {
        let cg = conv.apply_positive(&g);
        g = f.values().iter().zip(&cg).map(|(a, b)| a + b).collect();
        out.push(f.with_values(g.clone()).expect("finite iterate"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp1() -> ServiceDist {
        ServiceDist::exponential(1.0).unwrap()
    }

    /// Exact solution of the discrete nonlinear system by marching: at each node
    /// the implicit term `c·g⁺` is resolved in closed form.
    fn marching_oracle(f: &GridPath, d: &ServiceDist) -> Vec<f64> {
        let conv = Convolution::for_path(d, f);
        let n = f.steps();
        let c = conv.weight(1, 0);
        let mut g = vec![0.0; n + 1];
        g[0] = f.values()[0];
        for i in 1..=n {
            let rest = f.values()[i] + (1..=i).map(|j| conv.weight(i, j) * positive_part(g[i - j])).sum::<f64>();
            g[i] = if rest > 0.0 { rest / (1.0 - c) } else { rest };
        }
        g
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let f = GridPath::zeros(3.0, 60).unwrap();
        assert_eq!(solve_linear(&f, &exp1()).unwrap().path.sup_norm(), 0.0);
        assert_eq!(solve_nonlinear(&f, &exp1(), &RenewalOptions::default()).unwrap().path.sup_norm(), 0.0);
    }

    #[test]
    fn poisson_renewal_function_oracle() {
        // g = f + ∫ f dm with m(t) = μt for the exponential law
        for &n in &[100usize, 200] {
            let f = GridPath::from_fn(2.0, n, |_| 1.0).unwrap();
            let g = solve_linear(&f, &exp1()).unwrap();
            let exact = GridPath::from_fn(2.0, n, |t| 1.0 + t).unwrap();
            assert!(g.path.sup_distance(&exact).unwrap() <= 5.0 * f.step());
            let f = GridPath::from_fn(2.0, n, |t| t).unwrap();
            let g = solve_linear(&f, &exp1()).unwrap();
            let exact = GridPath::from_fn(2.0, n, |t| t + 0.5 * t * t).unwrap();
            assert!(g.path.sup_distance(&exact).unwrap() <= 5.0 * f.step());
            assert!(g.residual < 1e-12);
        }
    }

    #[test]
    fn nonnegative_forcing_matches_linear_solve() {
        let d = ServiceDist::erlang(2, 2.0).unwrap();
        let f = GridPath::from_fn(4.0, 200, |t| 0.3 + (t * 2.0).sin().abs()).unwrap();
        let lin = solve_linear(&f, &d).unwrap();
        let non = solve_nonlinear(&f, &d, &RenewalOptions::default()).unwrap();
        assert!(lin.path.sup_distance(&non.path).unwrap() < 1e-9);
    }

    #[test]
    fn negative_forcing_is_a_fixed_point() {
        let f = GridPath::from_fn(5.0, 100, |_| -1.0).unwrap();
        let g = solve_nonlinear(&f, &exp1(), &RenewalOptions::default()).unwrap();
        assert!(g.path.sup_distance(&f).unwrap() == 0.0);
        assert!(g.residual <= 1e-10);
    }

    #[test]
    fn picard_matches_marching_oracle() {
        let d = ServiceDist::hyperexponential(alloc::vec![0.4, 0.6], alloc::vec![0.5, 2.0]).unwrap();
        let f = GridPath::from_fn(10.0, 400, |t| (1.3 * t).sin() - 0.2 * t).unwrap();
        let g = solve_nonlinear(&f, &d, &RenewalOptions::default()).unwrap();
        assert!(g.windows > 1);
        let oracle = marching_oracle(&f, &d);
        let err = g.path.values().iter().zip(&oracle).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9, "err {err}");
        assert!(g.residual < 1e-9);
    }

    #[test]
    fn picard_contracts_with_factor_f_of_horizon() {
        let d = exp1();
        let horizon = 1.5;
        let f = GridPath::from_fn(horizon, 150, |t| 1.0 - t).unwrap();
        let it = picard_iterates(&f, &d, 12);
        let diffs: Vec<f64> = it.windows(2).map(|w| w[1].sup_distance(&w[0]).unwrap()).collect();
        let bound = d.cdf_at(horizon) + 1e-3;
        for w in diffs.windows(2).skip(1) {
            if w[0] > 1e-14 {
                assert!(w[1] / w[0] <= bound, "ratio {} > {bound}", w[1] / w[0]);
            }
        }
    }

    #[test]
    fn first_order_grid_refinement() {
        let d = ServiceDist::erlang(3, 3.0).unwrap();
        let forcing = |t: f64| (2.0 * t).cos() - 0.5;
        let coarse = solve_nonlinear(&GridPath::from_fn(3.0, 100, forcing).unwrap(), &d, &RenewalOptions::default()).unwrap();
        let fine = solve_nonlinear(&GridPath::from_fn(3.0, 200, forcing).unwrap(), &d, &RenewalOptions::default()).unwrap();
        let diff = (0..=100).map(|i| (coarse.path.values()[i] - fine.path.values()[2 * i]).abs()).fold(0.0_f64, f64::max);
        assert!(diff <= 3.0 * coarse.path.step(), "diff {diff}");
    }

    #[test]
    fn iteration_budget_exhaustion_is_reported() {
        let f = GridPath::from_fn(2.0, 50, |t| 1.0 + t).unwrap();
        let opts = RenewalOptions { max_iterations: 2, ..Default::default() };
        match solve_nonlinear(&f, &exp1(), &opts) {
            Err(RenewalError::NotConverged { residual, iterations }) => {
                assert!(residual > 0.0);
                assert_eq!(iterations, 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
