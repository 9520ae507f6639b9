//! Simulation and numerical limits for power-of-d(N) load balancing over N
//! parallel server pools with infinite-server dynamics.
//!
//! - [`model`]: occupancy and fluid states, parameters, growth functions
//! - [`policies`]: JSQ, JSQ(d), CJSQ(n), JSQ(n,d) and random assignment
//! - [`engine`]: exact CTMC simulation and steady-state estimation
//! - [`coupling`]: the task-based coupling of two policies with pathwise checks
//! - [`limits`]: fluid ODE, OU and reflected diffusions, diffusion scalings
//! - [`analytics`]: Erlang loss, loss bounds, exact small-instance solves
//! - [`io`]: CSV and metadata writers

pub mod analytics;
pub mod coupling;
pub mod engine;
pub mod error;
pub mod io;
pub mod limits;
pub mod model;
pub mod policies;
pub mod rng;

pub use error::{Error, Result};
