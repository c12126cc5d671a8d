use alloc::vec;
use alloc::vec::Vec;

use super::{QueueTrace, SimError};
use crate::dist::ServiceDist;
use crate::grid::GridPath;

/// How the two convolutions against `dF` are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvolutionRule {
    /// Exact sums over the jumps of the step processes.
    Exact,
    /// Left Riemann–Stieltjes sums on the report grid, first order in `Δt`.
    Grid,
}

/// Terms of the pathwise identity
/// `X(t) = (1−F(t))X(0)⁺ + X⁰(t) + ∫₀ᵗX(t−s)⁺dF(s) + H(t) + Θ(t)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub rule: ConvolutionRule,
    /// `X_n = (Q_n − n)/(b_n√n)`.
    pub x: GridPath,
    /// `Y_n = (A_n(t) − nμt)/(b_n√n)`.
    pub y: GridPath,
    /// `X⁰_n = (Q⁰_n(t) − n(1−F₀(t)))/(b_n√n)`, `Q⁰_n` the initial customers still in service.
    pub x0: GridPath,
    /// `H_n = Y_n − ∫Y_n(t−s)dF(s)`.
    pub h: GridPath,
    /// `∫₀ᵗ X_n(t−s)⁺ dF(s)`.
    pub conv_x_plus: GridPath,
    /// `Θ_n(t) = −(b_n√n)⁻¹ Σ_{τ̂ᵢ≤t} [1{τ̂ᵢ+ηᵢ≤t} − F(t−τ̂ᵢ)]`, exact.
    pub theta: GridPath,
    /// `J_n(t) = ∫₀ᵗ U_n(t−x, x)/(1−F(x)) dF(x)` by the trapezoid rule in `x`.
    pub j: GridPath,
    /// `M_n = J_n − Θ_n`.
    pub m: GridPath,
    /// Left side minus right side of the identity.
    pub residual: GridPath,
    pub sup_residual: f64,
    /// `1e−8` plus the a-priori error bound of the chosen convolution rule.
    pub residual_bound: f64,
}

/// `∫₀ᵗ Z(t−s) dF(s)` for a right-continuous step function with value `z0`
/// at 0 and jumps `(time, size)`.
fn step_convolution(d: &ServiceDist, t: f64, z0: f64, jumps: &[(f64, f64)]) -> f64 {
    let mut acc = z0 * d.cdf_at(t);
    for &(u, dz) in jumps {
        if u > t {
            break;
        }
        acc += dz * d.cdf_at(t - u);
    }
    acc
}

/// `Σ_{j<i} Z(t_{i−j−1}) (F(t_{j+1}) − F(t_j))` at every node.
fn grid_convolution(z: &[f64], cdf: &[f64]) -> Vec<f64> {
    (0..z.len()).map(|i| (0..i).map(|j| z[i - j - 1] * (cdf[j + 1] - cdf[j])).sum()).collect()
}

/// Rebuilds the decomposition terms from the raw events of `trace` on a grid of
/// `steps` steps over the trace horizon.
pub fn decomposition(trace: &QueueTrace, d: &ServiceDist, steps: usize, rule: ConvolutionRule) -> Result<DecompositionReport, SimError> {
    if trace.horizon.is_nan() || trace.horizon <= 0.0 {
        return Err(SimError::Invalid("decomposition needs a positive horizon"));
    }
    if steps < 2 {
        return Err(SimError::Invalid("at least two grid steps are required"));
    }
    let horizon = trace.horizon;
    let dt = horizon / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let s = trace.scale();
    let n = trace.n as f64;
    let mu = trace.mu;
    let cdf: Vec<f64> = times.iter().map(|t| d.cdf_at(*t)).collect();

    let x: Vec<f64> = times.iter().map(|t| trace.scaled_queue_at(*t)).collect();
    let y: Vec<f64> = times.iter().map(|t| (trace.arrivals_at(*t) as f64 - n * mu * t) / s).collect();
    let mut residuals = trace.initial_residuals.clone();
    residuals.sort_by(f64::total_cmp);
    let x0: Vec<f64> = times
        .iter()
        .map(|t| {
            let alive = residuals.len() - residuals.partition_point(|r| *r <= *t);
            (alive as f64 - n * d.eq_survival_at(*t)) / s
        })
        .collect();
    let theta: Vec<f64> = times
        .iter()
        .map(|&t| {
            let sum: f64 = trace
                .starts
                .iter()
                .take_while(|st| st.time <= t)
                .map(|st| f64::from(u8::from(st.time + st.duration <= t)) - d.cdf_at(t - st.time))
                .sum();
            -sum / s
        })
        .collect();

    // jumps of X⁺ and of A, for the exact rule and the error bound
    let mut x_plus_jumps = Vec::new();
    let excess = |q: u64| (q as f64 - n).max(0.0) / s;
    let mut prev = excess(trace.snapshots[0].queue);
    let x_plus0 = prev;
    for sn in &trace.snapshots[1..] {
        let v = excess(sn.queue);
        if v != prev {
            x_plus_jumps.push((sn.time, v - prev));
            prev = v;
        }
    }
    let arrival_jumps: Vec<(f64, f64)> = trace.arrivals.iter().map(|a| (*a, 1.0 / s)).collect();

    let (conv_x, conv_y) = match rule {
        ConvolutionRule::Exact => (
            times.iter().map(|t| step_convolution(d, *t, x_plus0, &x_plus_jumps)).collect::<Vec<_>>(),
            times
                .iter()
                .map(|&t| {
                    // ∫₀ᵗ (t−s) dF(s) = ∫₀ᵗ F = t − F₀(t)/μ
                    step_convolution(d, t, 0.0, &arrival_jumps) - n * mu / s * (t - d.eq_cdf_at(t) / mu)
                })
                .collect::<Vec<_>>(),
        ),
        ConvolutionRule::Grid => {
            let xp: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
            (grid_convolution(&xp, &cdf), grid_convolution(&y, &cdf))
        }
    };
    let h: Vec<f64> = y.iter().zip(&conv_y).map(|(y, c)| y - c).collect();
    let x0_plus = x[0].max(0.0);
    let residual: Vec<f64> = (0..=steps).map(|i| x[i] - ((1.0 - cdf[i]) * x0_plus + x0[i] + conv_x[i] + h[i] + theta[i])).collect();
    let sup_residual = residual.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let residual_bound = 1e-8
        + match rule {
            ConvolutionRule::Exact => 0.0,
            ConvolutionRule::Grid => {
                let tv: f64 = x_plus_jumps.iter().map(|(_, dz)| dz.abs()).sum::<f64>() + trace.arrivals.len() as f64 / s;
                dt * (d.pdf_sup() * tv + n * mu / s)
            }
        };

    // J_n by the trapezoid rule in x, U_n evaluated at grid nodes
    let start_counts: Vec<usize> = times.iter().map(|t| trace.starts_at(*t) as usize).collect();
    let mut j_vals = vec![0.0; steps + 1];
    let mut prefix = Vec::with_capacity(trace.starts.len() + 1);
    for (jx, &xj) in times.iter().enumerate() {
        let fx = cdf[jx];
        let surv = 1.0 - fx;
        if surv <= 0.0 {
            break;
        }
        let hazard = d.pdf_at(xj) / surv;
        prefix.clear();
        prefix.push(0usize);
        for st in &trace.starts {
            let last = *prefix.last().unwrap();
            prefix.push(last + usize::from(st.duration <= xj));
        }
        for i in jx..=steps {
            if i == 0 {
                continue;
            }
            let w = if jx == 0 || jx == i { 0.5 * dt } else { dt };
            let count = start_counts[i - jx];
            let u = (prefix[count] as f64 - count as f64 * fx) / s;
            j_vals[i] += w * u * hazard;
        }
    }
    let m_vals: Vec<f64> = j_vals.iter().zip(&theta).map(|(j, t)| j - t).collect();

    let path = |v: Vec<f64>| GridPath::new(horizon, v);
    Ok(DecompositionReport {
        rule,
        x: path(x)?,
        y: path(y)?,
        x0: path(x0)?,
        h: path(h)?,
        conv_x_plus: path(conv_x)?,
        theta: path(theta)?,
        j: path(j_vals)?,
        m: path(m_vals)?,
        residual: path(residual)?,
        sup_residual,
        residual_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::ModelParams;
    use crate::sim::{simulate, BRule, Interarrival, ScalingRegime, ServiceStart, SimSpec, Snapshot};

    fn spec(n: u64, q0: f64) -> SimSpec {
        SimSpec {
            params: ModelParams::new(1.0, 1.0, 0.5, q0).unwrap(),
            regime: ScalingRegime::new(n, BRule::Power { gamma: 0.25 }).unwrap(),
            interarrival: Interarrival::Exponential,
            horizon: 2.0,
        }
    }

    #[test]
    fn exact_rule_is_an_identity() {
        let d = ServiceDist::erlang(2, 2.0).unwrap();
        for (k, (n, q0)) in [(10, 0.4), (100, -0.2), (1000, 0.1)].into_iter().enumerate() {
            let t = simulate(&spec(n, q0), &d, 99, k as u64).unwrap();
            let r = decomposition(&t, &d, 100, ConvolutionRule::Exact).unwrap();
            assert!(r.sup_residual <= 1e-8, "n {n}: {}", r.sup_residual);
            for (m, (j, th)) in r.m.values().iter().zip(r.j.values().iter().zip(r.theta.values())) {
                assert_eq!(*m, j - th);
            }
        }
    }

    #[test]
    fn grid_rule_within_bound() {
        let d = ServiceDist::exponential(1.0).unwrap();
        let t = simulate(&spec(100, 0.3), &d, 5, 0).unwrap();
        let r = decomposition(&t, &d, 200, ConvolutionRule::Grid).unwrap();
        assert!(r.sup_residual <= r.residual_bound);
    }

    #[test]
    fn single_customer_theta() {
        // one server, one arrival at 0.3 served for 0.5, observed up to 1
        let d = ServiceDist::exponential(1.0).unwrap();
        let trace = QueueTrace {
            n: 1,
            b: 1.0,
            mu: 1.0,
            arrival_rate: 1.0,
            horizon: 1.0,
            seed: 0,
            stream: 0,
            initial_count: 0,
            initial_residuals: Vec::new(),
            arrivals: vec![0.3],
            starts: vec![ServiceStart { time: 0.3, duration: 0.5, customer: 0 }],
            events: Vec::new(),
            snapshots: vec![
                Snapshot { time: 0.0, queue: 0, busy: 0, arrivals: 0, starts: 0 },
                Snapshot { time: 0.3, queue: 1, busy: 0, arrivals: 1, starts: 0 },
                Snapshot { time: 0.3, queue: 1, busy: 1, arrivals: 1, starts: 1 },
                Snapshot { time: 0.8, queue: 0, busy: 0, arrivals: 1, starts: 1 },
            ],
        };
        let r = decomposition(&trace, &d, 10, ConvolutionRule::Exact).unwrap();
        // t = 0.5: −[0 − F(0.2)]; t = 1: −[1 − F(0.7)]
        assert!((r.theta.values()[5] - (1.0 - (-0.2f64).exp())).abs() < 1e-12);
        assert!((r.theta.values()[10] + (-0.7f64).exp()).abs() < 1e-12);
        assert_eq!(r.theta.values()[2], 0.0);
        assert!(r.sup_residual < 1e-12);
    }

    #[test]
    fn idle_trace_has_no_event_terms() {
        let d = ServiceDist::exponential(1.0).unwrap();
        let trace = QueueTrace {
            n: 1,
            b: 1.0,
            mu: 1.0,
            arrival_rate: 0.0,
            horizon: 1.0,
            seed: 0,
            stream: 0,
            initial_count: 1,
            initial_residuals: vec![5.0],
            arrivals: Vec::new(),
            starts: Vec::new(),
            events: Vec::new(),
            snapshots: vec![Snapshot { time: 0.0, queue: 1, busy: 1, arrivals: 0, starts: 0 }],
        };
        let r = decomposition(&trace, &d, 10, ConvolutionRule::Exact).unwrap();
        assert_eq!(r.theta.sup_norm(), 0.0);
        assert_eq!(r.conv_x_plus.sup_norm(), 0.0);
        assert!(r.sup_residual < 1e-12);
    }
}
