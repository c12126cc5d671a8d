//! Numerical toolkit for the moderate-deviations rate function of many-server
//! queues in the Halfin–Whitt regime.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! * [`dist`]: service-time families with exact cdf, density and stationary-excess
//!   distribution, plus samplers;
//! * [`renewal`]: solvers for the linear and the nonlinear renewal equation
//!   `g(t) = f(t) + ∫₀ᵗ g(t−s)⁺ dF(s)`;
//! * [`paths`]: control densities, their quadratic energy, the forward map
//!   controls → queue path, and the Kiefer/Brownian-sheet transform;
//! * [`fredholm`]: the adjoint Fredholm equation, rate value, dual value and
//!   optimal controls;
//! * [`oracle`]: a brute-force minimum-norm solve of the discretized variational
//!   problem, used to cross-check [`fredholm`];
//! * [`sim`]: an event-driven GI/GI/n simulator with the pathwise decomposition,
//!   law-of-large-numbers and tail diagnostics.
//!
//! File formats, configuration and the command line live in the `mdrate` crate.

#![no_std]

// Float methods come from `num_traits::Float` (libm). Whenever std is linked
// into the build its inherent methods take over and the imports go unused,
// hence the `allow` on each of them.

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dist;
pub mod fredholm;
pub mod grid;
pub mod oracle;
pub mod paths;
pub mod quad;
pub mod renewal;
pub mod rng;
pub mod sim;
pub mod stats;

mod error;

pub use dist::{DistError, ServiceDist};
pub use error::Error;
pub use fredholm::{RateOptions, RateResult};
pub use grid::{GridError, GridField2D, GridPath};
pub use paths::{ControlSet, ModelParams};
