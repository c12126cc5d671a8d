//! Event-driven GI/GI/n simulation under moderate-deviation scaling and the
//! pathwise diagnostics built on its traces.

mod decomposition;
mod lln;
mod queue;
mod scaling;
mod tail;

use thiserror::Error;

use crate::dist::DistError;
use crate::grid::GridError;
use crate::paths::PathsError;

pub use decomposition::{decomposition, ConvolutionRule, DecompositionReport};
pub use lln::{lln_check, lln_statistic, seed_permutation_check, LlnReport, LlnRow, PermutationCheck};
pub use queue::{simulate, EventKind, Interarrival, QueueTrace, ServiceStart, SimSpec, Snapshot, TraceEvent};
pub use scaling::{BRule, ScalingRegime};
pub use tail::{tail_hit, tail_row, TailEvent, TailRow};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("horizon must be finite and nonnegative, got {0}")]
    Horizon(f64),
    #[error("invalid scaling regime: {0}")]
    Regime(&'static str),
    #[error("traffic intensity {0} is not positive")]
    Rho(f64),
    #[error("invalid simulation input: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Paths(#[from] PathsError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Grid(#[from] GridError),
}
