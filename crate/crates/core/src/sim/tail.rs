use super::{simulate, QueueTrace, SimError, SimSpec};
use crate::dist::ServiceDist;
use crate::stats::wilson_interval;
#[allow(unused_imports)]
use num_traits::Float;

/// Tail event on the scaled queue `X_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailEvent {
    /// `sup_{s≤t} X_n(s) ≥ a`.
    SupAbove { t: f64, a: f64 },
    /// `X_n(t) ≥ a`.
    TerminalAbove { t: f64, a: f64 },
}

impl TailEvent {
    pub fn time(&self) -> f64 {
        match *self {
            TailEvent::SupAbove { t, .. } | TailEvent::TerminalAbove { t, .. } => t,
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            TailEvent::SupAbove { a, .. } | TailEvent::TerminalAbove { a, .. } => a,
        }
    }

    pub fn occurred(&self, trace: &QueueTrace) -> bool {
        match *self {
            TailEvent::TerminalAbove { t, a } => trace.scaled_queue_at(t) >= a,
            TailEvent::SupAbove { t, a } => {
                let s = trace.scale();
                let n = trace.n as f64;
                trace.snapshots.iter().take_while(|sn| sn.time <= t).any(|sn| (sn.queue as f64 - n) / s >= a)
            }
        }
    }
}

/// Whether the event occurs on replication `index` of `spec`.
pub fn tail_hit(spec: &SimSpec, d: &ServiceDist, event: &TailEvent, seed: u64, index: u64) -> Result<bool, SimError> {
    if event.level() == f64::NEG_INFINITY {
        return Ok(true);
    }
    let mut s = *spec;
    s.horizon = event.time();
    Ok(event.occurred(&simulate(&s, d, seed, index)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailRow {
    pub n: u64,
    pub b: f64,
    pub hits: u64,
    pub replications: u64,
    pub p_hat: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// `−ln p̂ / b_n²`; `None` when no hits were observed.
    pub slope: Option<f64>,
}

impl TailRow {
    pub fn censored(&self) -> bool {
        self.slope.is_none()
    }
}

/// Summarizes `hits` out of `replications` at scale `b`.
pub fn tail_row(n: u64, b: f64, hits: u64, replications: u64) -> TailRow {
    let p_hat = if replications == 0 { 0.0 } else { hits as f64 / replications as f64 };
    let (wilson_low, wilson_high) = wilson_interval(hits, replications, 1.959_963_984_540_054);
    let slope = (hits > 0).then(|| {
        let v = -p_hat.ln() / (b * b);
        if v == 0.0 {
            0.0
        } else {
            v
        }
    });
    TailRow { n, b, hits, replications, p_hat, wilson_low, wilson_high, slope }
}
