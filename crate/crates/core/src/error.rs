use thiserror::Error;

use crate::dist::DistError;
use crate::fredholm::FredholmError;
use crate::grid::GridError;
use crate::oracle::OracleError;
use crate::paths::PathsError;
use crate::renewal::RenewalError;
use crate::sim::SimError;

/// Any error raised by this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Renewal(#[from] RenewalError),
    #[error(transparent)]
    Paths(#[from] PathsError),
    #[error(transparent)]
    Fredholm(#[from] FredholmError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
