//! Simulation and analysis toolkit for mixed detection-estimation (MDE) over
//! sensor networks whose sensors are randomly defective.
//!
//! Each sensor observes `y_i = h_i * theta + w_i`, where `h_i` is an unknown
//! Bernoulli validity index. The crate provides:
//!
//! * [`model`]: the observation model and reproducible snapshot sampling,
//! * [`topology`]: communication graphs (random geometric graphs, edge lists),
//! * [`engine`]: the distributed MDE iteration (detection + consensus/innovations),
//! * [`estimators`]: the naive and ideal centralized benchmarks plus a
//!   small-instance fixed-point oracle,
//! * [`analysis`]: decision regions, order statistics of the observation
//!   mixture, event probabilities and asymptotic limits,
//! * [`harness`]: Monte Carlo sweeps, configuration and CSV persistence.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod topology;

pub use error::{Error, Result};
