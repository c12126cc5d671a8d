use alloc::collections::{BinaryHeap, VecDeque};
use alloc::vec::Vec;
use core::cmp::Ordering;
#[allow(unused_imports)]
use num_traits::Float;

use super::{ScalingRegime, SimError};
use crate::dist::ServiceDist;
use crate::paths::ModelParams;
use crate::rng::{open_unit, stream, Stream};

/// Interarrival law of the renewal arrival stream, scaled to mean `1/λ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interarrival {
    #[default]
    Exponential,
    Erlang(u32),
}

impl Interarrival {
    pub fn scv(&self) -> f64 {
        match *self {
            Interarrival::Exponential => 1.0,
            Interarrival::Erlang(k) => 1.0 / k as f64,
        }
    }

    /// The limiting arrival variability `σ² = μ·scv` implied by this law.
    pub fn implied_sigma(&self, mu: f64) -> f64 {
        (mu * self.scv()).sqrt()
    }

    fn sample(&self, rate: f64, rng: &mut Stream) -> f64 {
        match *self {
            Interarrival::Exponential => -open_unit(rng).ln() / rate,
            Interarrival::Erlang(k) => {
                let phase = rate * k as f64;
                (0..k).map(|_| -open_unit(rng).ln() / phase).sum()
            }
        }
    }
}

/// Everything that determines a trace apart from the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub params: ModelParams,
    pub regime: ScalingRegime,
    pub interarrival: Interarrival,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Arrival,
    ServiceStart,
    Departure,
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::ServiceStart => "start",
            EventKind::Departure => "departure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: EventKind,
    pub customer: u64,
}

/// A service start after time 0: the `i`-th jump of `Â_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceStart {
    pub time: f64,
    pub duration: f64,
    pub customer: u64,
}

/// Counters after an arrival or a departure, including the service start it triggers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub queue: u64,
    pub busy: u64,
    pub arrivals: u64,
    pub starts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueTrace {
    pub n: u64,
    pub b: f64,
    pub mu: f64,
    pub arrival_rate: f64,
    pub horizon: f64,
    pub seed: u64,
    pub stream: u64,
    pub initial_count: u64,
    /// Residual service times of the customers in service at time 0.
    pub initial_residuals: Vec<f64>,
    pub arrivals: Vec<f64>,
    pub starts: Vec<ServiceStart>,
    pub events: Vec<TraceEvent>,
    /// The state at time 0 followed by the state after every arrival and departure.
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Departure {
    time: f64,
    customer: u64,
}

impl Eq for Departure {}

impl Ord for Departure {
    // reversed for a min-heap: earliest time, then smallest customer index
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.customer.cmp(&self.customer))
    }
}

impl PartialOrd for Departure {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Simulates the FCFS GI/GI/n queue on `[0, horizon]` with the random stream
/// `(seed, stream_index)`.
///
/// Customers in service at time 0 have residual times drawn from the
/// stationary-excess law; initially queued customers and arrivals draw from
/// the service law. Simultaneous events resolve arrival first, then by
/// customer index.
pub fn simulate(spec: &SimSpec, d: &ServiceDist, seed: u64, stream_index: u64) -> Result<QueueTrace, SimError> {
    let horizon = spec.horizon;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SimError::Horizon(horizon));
    }
    spec.params.check_dist(d)?;
    let n = spec.regime.n;
    let lambda = spec.regime.arrival_rate(spec.params.mu, spec.params.beta)?;
    let q_init = spec.regime.initial_count(spec.params.q0);
    let mut rng = stream(seed, stream_index);

    let in_service = q_init.min(n);
    let mut departures = BinaryHeap::new();
    let mut initial_residuals = Vec::with_capacity(in_service as usize);
    for id in 0..in_service {
        let r = d.sample_equilibrium(&mut rng);
        initial_residuals.push(r);
        departures.push(Departure { time: r, customer: id });
    }
    let mut waiting: VecDeque<u64> = (in_service..q_init).collect();
    let mut next_id = q_init;

    let mut queue = q_init;
    let mut busy = in_service;
    let mut arrival_count = 0u64;
    let mut arrivals = Vec::new();
    let mut starts = Vec::new();
    let mut events = Vec::new();
    let mut snapshots = Vec::new();
    let snap = |time, queue, busy, arrivals, starts: &Vec<ServiceStart>, out: &mut Vec<Snapshot>| {
        out.push(Snapshot { time, queue, busy, arrivals, starts: starts.len() as u64 });
    };
    snap(0.0, queue, busy, arrival_count, &starts, &mut snapshots);

    let mut next_arrival = spec.interarrival.sample(lambda, &mut rng);
    loop {
        let dep = departures.peek().copied();
        let arrival_first = match dep {
            Some(dp) => next_arrival <= dp.time,
            None => true,
        };
        let time = if arrival_first { next_arrival } else { dep.map_or(f64::INFINITY, |dp| dp.time) };
        if time > horizon {
            break;
        }
        if arrival_first {
            let id = next_id;
            next_id += 1;
            queue += 1;
            arrival_count += 1;
            arrivals.push(time);
            events.push(TraceEvent { time, kind: EventKind::Arrival, customer: id });
            if busy < n {
                busy += 1;
                let duration = d.sample(&mut rng);
                starts.push(ServiceStart { time, duration, customer: id });
                departures.push(Departure { time: time + duration, customer: id });
                events.push(TraceEvent { time, kind: EventKind::ServiceStart, customer: id });
            } else {
                waiting.push_back(id);
            }
            snap(time, queue, busy, arrival_count, &starts, &mut snapshots);
            next_arrival = time + spec.interarrival.sample(lambda, &mut rng);
        } else {
            let dp = departures.pop().expect("departure present");
            queue -= 1;
            busy -= 1;
            events.push(TraceEvent { time, kind: EventKind::Departure, customer: dp.customer });
            if let Some(id) = waiting.pop_front() {
                busy += 1;
                let duration = d.sample(&mut rng);
                starts.push(ServiceStart { time, duration, customer: id });
                departures.push(Departure { time: time + duration, customer: id });
                events.push(TraceEvent { time, kind: EventKind::ServiceStart, customer: id });
            }
            snap(time, queue, busy, arrival_count, &starts, &mut snapshots);
        }
    }

    Ok(QueueTrace {
        n,
        b: spec.regime.b(),
        mu: spec.params.mu,
        arrival_rate: lambda,
        horizon,
        seed,
        stream: stream_index,
        initial_count: q_init,
        initial_residuals,
        arrivals,
        starts,
        events,
        snapshots,
    })
}

impl QueueTrace {
    /// `b_n √n`.
    pub fn scale(&self) -> f64 {
        self.b * (self.n as f64).sqrt()
    }

    /// Largest `|(Q−n)⁺ + Â − (Q(0)−n)⁺ − A|` over all snapshots, in integers.
    pub fn flow_balance_defect(&self) -> u64 {
        let n = self.n as i128;
        let excess0 = (self.initial_count as i128 - n).max(0);
        self.snapshots
            .iter()
            .map(|s| {
                let lhs = (s.queue as i128 - n).max(0) + s.starts as i128;
                (lhs - excess0 - s.arrivals as i128).unsigned_abs() as u64
            })
            .max()
            .unwrap_or(0)
    }

    /// Whether the number in service equals `Q ∧ n` after every event.
    pub fn service_count_consistent(&self) -> bool {
        self.snapshots.iter().all(|s| s.busy == s.queue.min(self.n))
    }

    /// Whether service starts are time ordered (so `Â` has unit jumps in order).
    pub fn starts_ordered(&self) -> bool {
        self.starts.windows(2).all(|w| w[0].time <= w[1].time)
    }

    /// Index of the last snapshot at or before `t`.
    fn snapshot_at(&self, t: f64) -> &Snapshot {
        let k = self.snapshots.partition_point(|s| s.time <= t);
        &self.snapshots[k.saturating_sub(1)]
    }

    /// `Q_n(t)`, right-continuous.
    pub fn queue_at(&self, t: f64) -> u64 {
        self.snapshot_at(t).queue
    }

    /// `A_n(t)`.
    pub fn arrivals_at(&self, t: f64) -> u64 {
        self.arrivals.partition_point(|a| *a <= t) as u64
    }

    /// `Â_n(t)`.
    pub fn starts_at(&self, t: f64) -> u64 {
        self.starts.partition_point(|s| s.time <= t) as u64
    }

    /// `X_n(t) = (Q_n(t) − n)/(b_n √n)`.
    pub fn scaled_queue_at(&self, t: f64) -> f64 {
        (self.queue_at(t) as f64 - self.n as f64) / self.scale()
    }

    /// `∫₀ᵗ Q_n(s)/n ds / t`.
    pub fn time_average_occupancy(&self, from: f64, to: f64) -> f64 {
        let mut acc = 0.0;
        for (k, s) in self.snapshots.iter().enumerate() {
            let start = s.time.max(from);
            let end = self.snapshots.get(k + 1).map_or(self.horizon, |x| x.time).min(to);
            if end > start {
                acc += s.queue as f64 * (end - start);
            }
        }
        acc / (to - from) / self.n as f64
    }
}
