//! Occupancy states, fluid states, system parameters and growth functions.
//!
//! The occupancy state `Q = (Q_1, Q_2, ...)` with `Q_i` the number of pools
//! holding at least `i` tasks is the sufficient statistic of the system under
//! every policy in this crate; individual pools are never tracked.

mod fluid;
mod growth;
mod occupancy;
mod params;

pub use fluid::{assignment_fractions, FluidState, UNIT_TOLERANCE};
pub use growth::GrowthSpec;
pub use occupancy::{Buffer, OccupancyState, ServiceMode};
pub use params::SystemParams;
pub(crate) use params::snap_floor;
