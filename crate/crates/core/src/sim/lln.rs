use alloc::vec::Vec;

use super::QueueTrace;
use crate::stats::{ks_two_sample, quantile};

/// `sup_{s≤t} |Â_n(s)/n − μs|`, exact over the jump times of `Â_n`.
pub fn lln_statistic(trace: &QueueTrace, t: f64) -> f64 {
    let n = trace.n as f64;
    let mu = trace.mu;
    let t = t.min(trace.horizon);
    let mut sup = 0.0_f64;
    for (k, st) in trace.starts.iter().enumerate() {
        if st.time > t {
            break;
        }
        let drift = mu * st.time;
        sup = sup.max((k as f64 / n - drift).abs()).max(((k + 1) as f64 / n - drift).abs());
    }
    sup.max((trace.starts_at(t) as f64 / n - mu * t).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnRow {
    pub n: u64,
    pub replications: usize,
    pub mean: f64,
    pub median: f64,
    pub q99: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnReport {
    pub horizon: f64,
    pub rows: Vec<LlnRow>,
    /// The 99th percentile decreases strictly along the ladder.
    pub q99_decreasing: bool,
}

/// Summaries of the statistic per server count; `samples` pairs each `n`
/// with its replicated statistics, in ladder order.
pub fn lln_check(horizon: f64, samples: &[(u64, Vec<f64>)]) -> LlnReport {
    let rows: Vec<LlnRow> = samples
        .iter()
        .map(|(n, xs)| LlnRow {
            n: *n,
            replications: xs.len(),
            mean: xs.iter().sum::<f64>() / xs.len().max(1) as f64,
            median: quantile(xs, 0.5),
            q99: quantile(xs, 0.99),
            max: xs.iter().fold(0.0_f64, |m, v| m.max(*v)),
        })
        .collect();
    let q99_decreasing = rows.windows(2).all(|w| w[1].q99 < w[0].q99);
    LlnReport { horizon, rows, q99_decreasing }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationCheck {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS comparison of the statistic across two disjoint seed sets.
pub fn seed_permutation_check(first: &[f64], second: &[f64]) -> PermutationCheck {
    let (statistic, p_value) = ks_two_sample(first, second);
    PermutationCheck { statistic, p_value }
}
