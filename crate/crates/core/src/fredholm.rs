//! The rate function through the adjoint Fredholm equation.
//!
//! For a path `q` with `q(0) = q₀` the rate is `I(q) = ½∫₀ᵀ p̄(t) h(t) dt`, where
//!
//! ```text
//! h(t) = q̇(t) − ∫₀ᵗ q̇(s) 1{q(s)>0} F'(t−s) ds + (β − q₀⁻) F₀'(t)
//! ```
//!
//! and `p̄` solves the Fredholm equation of the second kind
//!
//! ```text
//! (μ+σ²) p(t) = h(t) + ∫₀ᵀ K(s,t) p(s) ds,
//! K(s,t) = σ² F'(|s−t|) − σ² ∫₀^{s∧t} F'(s−r) F'(t−r) dr.
//! ```
//!
//! `p̄` is the unique maximiser of the concave dual objective
//!
//! ```text
//! D(p) = ∫ p h − ½( μ∫p² + ∫(σp(t) − σ∫p(t+s)F'(s)ds)² dt ),
//! ```
//!
//! and the optimal controls are read off `p̄` directly. The problem is posed on
//! the horizon of the supplied path with `p ≡ 0` beyond it.
//!
//! Discretization: the dual objective is discretized with the trapezoid rule
//! and [`dual_kernel`] is the exact stationarity condition of that discrete
//! objective, so `I = ½∫p̄h` and `D(p̄)` agree to solver precision. Its
//! off-diagonal entries away from `t = 0` are the trapezoid node values of `K`;
//! the diagonal and the first row and column carry the `O(Δt)` corrections
//! that make the discrete problem variational. [`assemble_kernel`] evaluates
//! the plain node values of `K` with a choice of inner quadrature.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dist::{DistError, ServiceDist};
use crate::grid::{trapezoid_weights, GridError, GridField2D, GridPath};
use crate::paths::{path_defect, ControlSet, ModelParams, PathsError};
use crate::quad::GaussLegendre;
use crate::renewal::RenewalOptions;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FredholmError {
    #[error("path starts at {got}, expected q0 = {expected}")]
    InitialValue { got: f64, expected: f64 },
    #[error("Fredholm solve failed: picard residual {picard:e}, direct residual {direct:e}, tolerance {tolerance:e}")]
    SolveFailed { picard: f64, direct: f64, tolerance: f64 },
    #[error("rate value {0:e} is negative beyond the clamping tolerance")]
    NegativeRate(f64),
    #[error("kernel and forcing live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Paths(#[from] PathsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Second-order finite-difference derivative: central in the interior,
/// one-sided three-point stencils at both ends.
pub fn derivative(path: &GridPath) -> GridPath {
    let v = path.values();
    let n = path.steps();
    let h = path.step();
    let mut d = Vec::with_capacity(n + 1);
    d.push((-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h));
    for i in 1..n {
        d.push((v[i + 1] - v[i - 1]) / (2.0 * h));
    }
    d.push((3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * h));
    path.with_values(d).expect("finite derivative")
}

/// The forcing `h` of the Fredholm equation.
///
/// `h` is the time derivative of the control-free defect
/// `R = q − (1−F)q₀⁺ + (1−F₀)q₀⁻ + βF₀ − ∫q⁺dF`; differentiating `R` gives the
/// integrand above term by term (the `q(0)⁺F'(t)` boundary term of `d/dt∫q⁺dF`
/// cancels `−F'(t)q₀⁺`). Working with `R` keeps the discrete forcing of a path
/// produced by the renewal solver exactly zero.
pub fn forcing(q: &GridPath, pm: &ModelParams, d: &ServiceDist) -> Result<GridPath, FredholmError> {
    let q0 = q.values()[0];
    if (q0 - pm.q0).abs() > 1e-12 * (1.0 + pm.q0.abs()) {
        return Err(FredholmError::InitialValue { got: q0, expected: pm.q0 });
    }
    pm.check_dist(d)?;
    let defect = path_defect(q, pm, d)?;
    Ok(derivative(&defect))
}

/// Inner quadrature for `∫₀^{s∧t} F'(s−r)F'(t−r) dr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerRule {
    /// Trapezoid rule on the solver grid.
    Trapezoid,
    /// Gauss–Legendre with this many points on every grid cell.
    GaussLegendre(usize),
}

/// Kernel values at node pairs, `σ²` included.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    matrix: DMatrix<f64>,
    horizon: f64,
}

impl KernelMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn steps(&self) -> usize {
        self.matrix.nrows() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.matrix[(a, b)]
    }

    pub fn is_symmetric(&self) -> bool {
        self.matrix == self.matrix.transpose()
    }
}

/// Node values `K(tₐ, t_b)` on `[0, horizon]` with `steps` steps.
pub fn assemble_kernel(pm: &ModelParams, d: &ServiceDist, horizon: f64, steps: usize, rule: InnerRule) -> KernelMatrix {
    let h = horizon / steps as f64;
    let s2 = pm.sigma * pm.sigma;
    let dens: Vec<f64> = (0..=steps).map(|j| d.pdf_at(j as f64 * h)).collect();
    let gl = match rule {
        InnerRule::GaussLegendre(p) => Some(GaussLegendre::new(p)),
        InnerRule::Trapezoid => None,
    };
    let mut m = DMatrix::zeros(steps + 1, steps + 1);
    for a in 0..=steps {
        for b in a..=steps {
            // a ≤ b, so s∧t = t_a
            let inner = match &gl {
                None => {
                    if a == 0 {
                        0.0
                    } else {
                        (0..=a)
                            .map(|i| {
                                let w = if i == 0 || i == a { 0.5 * h } else { h };
                                w * dens[a - i] * dens[b - i]
                            })
                            .sum()
                    }
                }
                Some(gl) => {
                    let (ta, tb) = (a as f64 * h, b as f64 * h);
                    (0..a)
                        .map(|c| {
                            let lo = c as f64 * h;
                            gl.integrate(lo, lo + h, |r| d.pdf_at(ta - r) * d.pdf_at(tb - r))
                        })
                        .sum()
                }
            };
            let v = s2 * (dens[b - a] - inner);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    KernelMatrix { matrix: m, horizon }
}

/// Matrix of the trapezoid shift operator `(Sp)ᵢ = ∫₀^{T−tᵢ} p(tᵢ+s) F'(s) ds`.
fn shift_matrix(d: &ServiceDist, steps: usize, h: f64) -> DMatrix<f64> {
    let dens: Vec<f64> = (0..=steps).map(|j| d.pdf_at(j as f64 * h)).collect();
    let mut c = DMatrix::zeros(steps + 1, steps + 1);
    for i in 0..steps {
        for j in i..=steps {
            let w = if j == i || j == steps { 0.5 * h } else { h };
            c[(i, j)] = w * dens[j - i];
        }
    }
    c
}

/// `∫₀^{T−t} p(t+s) F'(s) ds` at every node (trapezoid, `p ≡ 0` beyond `T`).
pub fn shift_integral(p: &GridPath, d: &ServiceDist) -> Vec<f64> {
    let n = p.steps();
    let h = p.step();
    let dens: Vec<f64> = (0..=n).map(|j| d.pdf_at(j as f64 * h)).collect();
    let v = p.values();
    (0..=n)
        .map(|i| {
            if i == n {
                return 0.0;
            }
            (i..=n)
                .map(|j| {
                    let w = if j == i || j == n { 0.5 * h } else { h };
                    w * dens[j - i] * v[j]
                })
                .sum()
        })
        .collect()
}

/// The kernel whose Nyström system is the stationarity condition of the
/// trapezoid-discretized dual objective: `K = σ²(P + Pᵀ − PᵀWP)` with
/// `P = CW⁻¹`, `C` the shift matrix and `W` the trapezoid weights.
pub fn dual_kernel(pm: &ModelParams, d: &ServiceDist, horizon: f64, steps: usize) -> KernelMatrix {
    let h = horizon / steps as f64;
    let w = trapezoid_weights(steps, h);
    let mut p = shift_matrix(d, steps, h);
    for (b, wb) in w.iter().enumerate() {
        p.column_mut(b).scale_mut(1.0 / wb);
    }
    let mut wp = p.clone();
    for (i, wi) in w.iter().enumerate() {
        wp.row_mut(i).scale_mut(*wi);
    }
    let ptwp = p.transpose() * wp;
    let s2 = pm.sigma * pm.sigma;
    let mut m = (&p + p.transpose() - ptwp) * s2;
    // symmetric up to rounding; make it exact
    for a in 0..=steps {
        for b in (a + 1)..=steps {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    KernelMatrix { matrix: m, horizon }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Picard,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePolicy {
    /// Picard first, dense solve on stagnation or failure.
    Auto,
    PicardOnly,
    DirectOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Residual tolerance, relative to `1 + ‖h‖∞`.
    pub tolerance: f64,
    pub max_picard_iterations: usize,
    pub policy: SolvePolicy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_picard_iterations: 2_000, policy: SolvePolicy::Auto }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    pub p: GridPath,
    pub method: SolveMethod,
    pub picard_iterations: usize,
    /// `sup |(μ+σ²)p − h − ∫Kp|`.
    pub residual: f64,
}

fn nystrom_apply(k: &KernelMatrix, w: &[f64], p: &[f64]) -> DVector<f64> {
    let wp = DVector::from_iterator(p.len(), p.iter().zip(w).map(|(a, b)| a * b));
    k.matrix() * wp
}

/// `sup |(μ+σ²)p − h − Σ_b K(·,t_b) W_b p_b|`.
pub fn fredholm_residual(p: &GridPath, h: &GridPath, k: &KernelMatrix, pm: &ModelParams) -> f64 {
    let w = trapezoid_weights(h.steps(), h.step());
    let kp = nystrom_apply(k, &w, p.values());
    let a = pm.mu + pm.sigma * pm.sigma;
    p.values().iter().zip(h.values()).zip(kp.iter()).fold(0.0_f64, |m, ((p, h), kp)| m.max((a * p - h - kp).abs()))
}

/// Solves `(μ+σ²)p = h + ∫Kp` by Picard iteration with a dense fallback.
pub fn solve_p(h: &GridPath, k: &KernelMatrix, pm: &ModelParams, opts: &SolveOptions) -> Result<AdjointSolution, FredholmError> {
    if k.steps() != h.steps() || (k.horizon() - h.horizon()).abs() > 1e-12 * h.horizon() {
        return Err(FredholmError::GridMismatch);
    }
    let tol = opts.tolerance * (1.0 + h.sup_norm());
    let a = pm.mu + pm.sigma * pm.sigma;
    let w = trapezoid_weights(h.steps(), h.step());

    let mut picard_residual = f64::INFINITY;
    let mut iterations = 0;
    if opts.policy != SolvePolicy::DirectOnly {
        let mut p: Vec<f64> = h.values().iter().map(|v| v / a).collect();
        let mut last_change = f64::INFINITY;
        let mut slow = 0;
        for _ in 0..opts.max_picard_iterations {
            iterations += 1;
            let kp = nystrom_apply(k, &w, &p);
            let next: Vec<f64> = h.values().iter().zip(kp.iter()).map(|(h, kp)| (h + kp) / a).collect();
            let change = next.iter().zip(&p).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            p = next;
            if change <= 0.1 * tol / a {
                break;
            }
            // stagnation: contraction factor too close to one, or divergence
            if change > 0.999 * last_change {
                slow += 1;
                if slow >= 5 {
                    break;
                }
            } else {
                slow = 0;
            }
            last_change = change;
        }
        let candidate = h.with_values(p)?;
        picard_residual = fredholm_residual(&candidate, h, k, pm);
        if picard_residual <= tol {
            return Ok(AdjointSolution {
                p: candidate,
                method: SolveMethod::Picard,
                picard_iterations: iterations,
                residual: picard_residual,
            });
        }
        if opts.policy == SolvePolicy::PicardOnly {
            return Err(FredholmError::SolveFailed { picard: picard_residual, direct: f64::NAN, tolerance: tol });
        }
    }

    let n = h.steps() + 1;
    let mut system = k.matrix().clone();
    for (b, wb) in w.iter().enumerate() {
        system.column_mut(b).scale_mut(-wb);
    }
    for i in 0..n {
        system[(i, i)] += a;
    }
    let rhs = DVector::from_column_slice(h.values());
    let direct = system.lu().solve(&rhs);
    let Some(sol) = direct else {
        return Err(FredholmError::SolveFailed { picard: picard_residual, direct: f64::INFINITY, tolerance: tol });
    };
    let candidate = h.with_values(sol.iter().copied().collect())?;
    let residual = fredholm_residual(&candidate, h, k, pm);
    if residual <= tol {
        Ok(AdjointSolution { p: candidate, method: SolveMethod::Direct, picard_iterations: iterations, residual })
    } else {
        Err(FredholmError::SolveFailed { picard: picard_residual, direct: residual, tolerance: tol })
    }
}

/// `½∫p̄h` by the trapezoid rule; values in `[−clamp, 0)` are reported as 0.
pub fn rate_value(p: &GridPath, h: &GridPath, clamp: f64) -> Result<f64, FredholmError> {
    if !p.same_grid(h) {
        return Err(FredholmError::GridMismatch);
    }
    let w = trapezoid_weights(h.steps(), h.step());
    let v = 0.5 * p.values().iter().zip(h.values()).zip(&w).map(|((p, h), w)| p * h * w).sum::<f64>();
    if v >= 0.0 {
        Ok(v)
    } else if v >= -clamp {
        Ok(0.0)
    } else {
        Err(FredholmError::NegativeRate(v))
    }
}

/// The dual objective `∫ph − ½(μ∫p² + ∫(σp − σ∫p(·+s)F'(s)ds)²)` by the
/// trapezoid rule, with `p ≡ 0` beyond the horizon.
pub fn dual_value(p: &GridPath, h: &GridPath, pm: &ModelParams, d: &ServiceDist) -> Result<f64, FredholmError> {
    if !p.same_grid(h) {
        return Err(FredholmError::GridMismatch);
    }
    let w = trapezoid_weights(h.steps(), h.step());
    let shift = shift_integral(p, d);
    let mut linear = 0.0;
    let mut quad = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let pi = p.values()[i];
        linear += wi * pi * h.values()[i];
        let wiener = pm.sigma * (pi - shift[i]);
        quad += wi * (pm.mu * pi * pi + wiener * wiener);
    }
    Ok(linear - 0.5 * quad)
}

/// Optimal controls from the adjoint:
/// `ẇ⁰(x) = p̄(F₀⁻¹(x))`, `ẇ(t) = σp̄(t) − σ∫p̄(t+s)F'(s)ds`,
/// `k̇(x,τ) = p̄(τ/μ + F⁻¹(x))`, with `p̄ ≡ 0` beyond the horizon.
pub fn recover_controls(p: &GridPath, pm: &ModelParams, d: &ServiceDist, x_steps: usize) -> Result<ControlSet, FredholmError> {
    let horizon = p.horizon();
    let at = |t: f64| p.interpolate(t).unwrap_or(0.0);
    let dx = 1.0 / x_steps as f64;
    let mut eq_inv = Vec::with_capacity(x_steps + 1);
    let mut inv = Vec::with_capacity(x_steps + 1);
    for a in 0..=x_steps {
        if a == x_steps {
            eq_inv.push(f64::INFINITY);
            inv.push(f64::INFINITY);
        } else {
            let x = a as f64 * dx;
            eq_inv.push(d.eq_quantile(x)?);
            inv.push(d.quantile(x)?);
        }
    }
    let w0 = GridPath::new(1.0, eq_inv.iter().map(|&s| if s <= horizon { at(s) } else { 0.0 }).collect())?;
    let shift = shift_integral(p, d);
    let w = p.with_values(p.values().iter().zip(&shift).map(|(p, s)| pm.sigma * (p - s)).collect())?;
    let n = p.steps();
    let mut k = Vec::with_capacity((x_steps + 1) * (n + 1));
    for j in 0..=n {
        let t = p.time(j);
        for &s in &inv {
            let arg = t + s;
            k.push(if arg <= horizon { at(arg) } else { 0.0 });
        }
    }
    let k = GridField2D::new(x_steps, pm.mu * horizon, n, k)?;
    Ok(ControlSet::new(w0, w, k)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    pub renewal: RenewalOptions,
    pub solve: SolveOptions,
    /// Steps of the `[0,1]` grid for the recovered `ẇ⁰` and `k̇`; the number
    /// of time steps when unset.
    pub x_steps: Option<usize>,
    /// Negative rate values above `−clamp` are reported as zero.
    pub clamp: f64,
    /// Tail mass `1 − F(T)` above which the horizon truncation is flagged.
    pub tail_tolerance: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { renewal: RenewalOptions::default(), solve: SolveOptions::default(), x_steps: None, clamp: 1e-10, tail_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    pub forcing: GridPath,
    pub adjoint: GridPath,
    pub rate: f64,
    pub dual: f64,
    pub controls: ControlSet,
    /// Energy of the recovered controls.
    pub primal_energy: f64,
    /// Energy after projecting the recovered controls onto zero x-means.
    pub projected_energy: f64,
    /// `primal_energy − dual`.
    pub duality_gap: f64,
    pub residual: f64,
    pub method: SolveMethod,
    pub picard_iterations: usize,
    pub horizon: f64,
    pub steps: usize,
    /// `1 − F(T)`: service mass beyond the horizon.
    pub tail_mass: f64,
    /// Set when `tail_mass` exceeds the configured tolerance.
    pub truncation_flagged: bool,
}

/// Evaluates the rate of `q` on its own horizon and recovers the optimal controls.
pub fn evaluate_rate(q: &GridPath, pm: &ModelParams, d: &ServiceDist, opts: &RateOptions) -> Result<RateResult, FredholmError> {
    let h = forcing(q, pm, d)?;
    let k = dual_kernel(pm, d, q.horizon(), q.steps());
    let sol = solve_p(&h, &k, pm, &opts.solve)?;
    let rate = rate_value(&sol.p, &h, opts.clamp)?;
    let dual = dual_value(&sol.p, &h, pm, d)?;
    let controls = recover_controls(&sol.p, pm, d, opts.x_steps.unwrap_or(q.steps()))?;
    let primal_energy = controls.energy();
    let projected_energy = controls.projected().energy();
    let tail_mass = d.survival_at(q.horizon());
    Ok(RateResult {
        forcing: h,
        rate,
        dual,
        primal_energy,
        projected_energy,
        duality_gap: primal_energy - dual,
        residual: sol.residual,
        method: sol.method,
        picard_iterations: sol.picard_iterations,
        horizon: q.horizon(),
        steps: q.steps(),
        tail_mass,
        truncation_flagged: tail_mass > opts.tail_tolerance,
        adjoint: sol.p,
        controls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::lln_path;

    fn exp1() -> ServiceDist {
        ServiceDist::exponential(1.0).unwrap()
    }

    fn params(beta: f64, q0: f64) -> ModelParams {
        ModelParams::new(1.0, 1.0, beta, q0).unwrap()
    }

    #[test]
    fn forcing_examples() {
        let d = exp1();
        let zero = GridPath::zeros(2.0, 200).unwrap();
        assert_eq!(forcing(&zero, &params(0.0, 0.0), &d).unwrap().sup_norm(), 0.0);

        let h = forcing(&zero, &params(1.0, 0.0), &d).unwrap();
        let exact = GridPath::from_fn(2.0, 200, |t| (-t).exp()).unwrap();
        assert!(h.sup_distance(&exact).unwrap() < 1e-4);

        let q = GridPath::from_fn(2.0, 200, |t| t).unwrap();
        let h = forcing(&q, &params(0.0, 0.0), &d).unwrap();
        assert!(h.sup_distance(&exact).unwrap() < 2e-4);
    }

    #[test]
    fn forcing_rejects_wrong_start() {
        let q = GridPath::from_fn(2.0, 20, |t| 1.0 + t).unwrap();
        assert!(matches!(forcing(&q, &params(0.0, 0.0), &exp1()), Err(FredholmError::InitialValue { .. })));
    }

    #[test]
    fn kernel_is_symmetric_and_matches_closed_form() {
        let d = ServiceDist::exponential(1.5).unwrap();
        let pm = ModelParams::new(1.5, 0.8, 0.0, 0.0).unwrap();
        let k = assemble_kernel(&pm, &d, 3.0, 30, InnerRule::GaussLegendre(12));
        assert!(k.is_symmetric());
        let (mu, s2) = (1.5, 0.64);
        for a in 0..=30 {
            for b in 0..=30 {
                let (s, t) = (a as f64 * 0.1, b as f64 * 0.1);
                let exact = s2 * mu / 2.0 * ((-mu * (s - t).abs()).exp() + (-mu * (s + t)).exp());
                assert!((k.get(a, b) - exact).abs() < 1e-12);
            }
        }
        let k1 = assemble_kernel(&params(0.0, 0.0), &exp1(), 1.0, 4, InnerRule::Trapezoid);
        assert!((k1.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dual_kernel_matches_trapezoid_nodes_off_the_diagonal() {
        let d = ServiceDist::erlang(2, 2.0).unwrap();
        let pm = ModelParams::new(1.0, 1.3, 0.0, 0.0).unwrap();
        let dk = dual_kernel(&pm, &d, 2.0, 40);
        let tk = assemble_kernel(&pm, &d, 2.0, 40, InnerRule::Trapezoid);
        assert!(dk.is_symmetric());
        for a in 1..=40 {
            for b in 1..=40 {
                if a != b {
                    assert!((dk.get(a, b) - tk.get(a, b)).abs() < 1e-12, "({a},{b})");
                }
            }
        }
    }

    #[test]
    fn zero_forcing_zero_adjoint() {
        let h = GridPath::zeros(2.0, 50).unwrap();
        let pm = params(0.0, 0.0);
        let k = dual_kernel(&pm, &exp1(), 2.0, 50);
        let sol = solve_p(&h, &k, &pm, &SolveOptions::default()).unwrap();
        assert_eq!(sol.p.sup_norm(), 0.0);
        assert_eq!(rate_value(&sol.p, &h, 1e-10).unwrap(), 0.0);
        assert_eq!(dual_value(&sol.p, &h, &pm, &exp1()).unwrap(), 0.0);
    }

    #[test]
    fn vanishing_sigma_gives_h_over_mu() {
        let d = ServiceDist::exponential(2.0).unwrap();
        let pm = ModelParams::new(2.0, 1e-6, 0.0, 0.0).unwrap();
        let h = GridPath::from_fn(3.0, 60, |t| (t * 1.7).sin()).unwrap();
        let k = assemble_kernel(&pm, &d, 3.0, 60, InnerRule::Trapezoid);
        let sol = solve_p(&h, &k, &pm, &SolveOptions::default()).unwrap();
        for (p, hv) in sol.p.values().iter().zip(h.values()) {
            assert!((p - hv / 2.0).abs() < 1e-4);
        }
        // with μ = 1 the rate reduces to ½∫h²
        let pm1 = ModelParams::new(1.0, 1e-6, 0.0, 0.0).unwrap();
        let k1 = assemble_kernel(&pm1, &exp1(), 3.0, 60, InnerRule::Trapezoid);
        let p1 = solve_p(&h, &k1, &pm1, &SolveOptions::default()).unwrap().p;
        let r = rate_value(&p1, &h, 1e-10).unwrap();
        assert!((r - 0.5 * h.squared_integral()).abs() < 1e-9);
    }

    #[test]
    fn doubled_grid_agreement() {
        let pm = params(0.0, 0.0);
        let d = exp1();
        let solve = |n: usize| {
            let h = GridPath::from_fn(8.0, n, |t| (-t).exp()).unwrap();
            let k = assemble_kernel(&pm, &d, 8.0, n, InnerRule::Trapezoid);
            solve_p(&h, &k, &pm, &SolveOptions { policy: SolvePolicy::DirectOnly, ..Default::default() }).unwrap().p
        };
        let coarse = solve(200);
        let fine = solve(400);
        let scale = fine.sup_norm();
        let err = (0..=200).map(|i| (coarse.values()[i] - fine.values()[2 * i]).abs()).fold(0.0_f64, f64::max);
        assert!(err / scale <= 1e-3, "relative error {}", err / scale);
    }

    #[test]
    fn picard_and_direct_agree() {
        let pm = ModelParams::new(1.0, 0.9, 0.4, 0.0).unwrap();
        let d = exp1();
        let q = GridPath::from_fn(2.0, 120, |t| 0.3 * t * (2.0 - t)).unwrap();
        let h = forcing(&q, &pm, &d).unwrap();
        let k = dual_kernel(&pm, &d, 2.0, 120);
        let picard = solve_p(&h, &k, &pm, &SolveOptions { policy: SolvePolicy::PicardOnly, ..Default::default() }).unwrap();
        let direct = solve_p(&h, &k, &pm, &SolveOptions { policy: SolvePolicy::DirectOnly, ..Default::default() }).unwrap();
        assert_eq!(picard.method, SolveMethod::Picard);
        assert!(picard.p.sup_distance(&direct.p).unwrap() <= 1e-8);
    }

    #[test]
    fn saddle_point_and_strict_concavity() {
        let pm = params(0.5, 0.0);
        let d = exp1();
        let q = GridPath::from_fn(2.0, 100, |t| 0.3 * t * (2.0 - t)).unwrap();
        let r = evaluate_rate(&q, &pm, &d, &RateOptions::default()).unwrap();
        assert!((r.rate - r.dual).abs() <= 1e-6 * (1.0 + r.rate));
        for eps in [1e-3, -1e-2, 0.1] {
            let bumped = r
                .adjoint
                .with_values(r.adjoint.values().iter().enumerate().map(|(i, p)| p + eps * (i as f64 * 0.05).cos()).collect())
                .unwrap();
            assert!(dual_value(&bumped, &r.forcing, &pm, &d).unwrap() < r.dual);
        }
        assert!(r.primal_energy >= r.rate - 1e-2 * r.rate);
    }

    #[test]
    fn lln_path_has_zero_rate() {
        let d = ServiceDist::erlang(2, 2.0).unwrap();
        for beta in [-1.0, 0.0, 1.0] {
            let pm = ModelParams::new(1.0, 1.0, beta, 0.2).unwrap();
            let q = lln_path(&pm, &d, 3.0, 150, &RenewalOptions::default()).unwrap();
            let r = evaluate_rate(&q, &pm, &d, &RateOptions::default()).unwrap();
            assert!(r.rate <= 1e-10, "beta {beta}: {}", r.rate);
        }
    }

    #[test]
    fn zero_adjoint_recovers_zero_controls() {
        let pm = params(0.0, 0.0);
        let p = GridPath::zeros(2.0, 20).unwrap();
        let c = recover_controls(&p, &pm, &exp1(), 8).unwrap();
        assert_eq!(c.energy(), 0.0);
    }

    #[test]
    fn constant_adjoint_wiener_control() {
        // ẇ(t) = σc(1 − F(T−t)) for p̄ ≡ c on [0,T]
        let pm = ModelParams::new(1.0, 1.3, 0.0, 0.0).unwrap();
        let d = exp1();
        let c = 0.7;
        let p = GridPath::from_fn(12.0, 1200, |_| c).unwrap();
        let ctrl = recover_controls(&p, &pm, &d, 8).unwrap();
        for (i, t) in ctrl.w_dot.times().enumerate() {
            let direct = 1.3 * c * (1.0 - d.cdf_at(12.0 - t));
            assert!((ctrl.w_dot.values()[i] - direct).abs() < 1e-5, "t = {t}");
        }
        assert!(ctrl.w_dot.values()[0].abs() < 1e-5);
    }
}
