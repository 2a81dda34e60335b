//! Domain types shared by every simulator: statuses, microscale and
//! population states, potentials, spatial partitions, adoption rules and
//! random-number streams.

mod multinomial;
mod partition;
mod potential;
mod rng;
mod rules;
mod state;
mod status;

pub use multinomial::{ln_multinomial_weight, multinomial_weight};
pub use partition::{Aabb, Interval, PartitionKind, Region, SpatialPartition};
pub use potential::Potential;
pub use rng::RngStream;
pub use rules::{distance_indicator, AdoptionRuleSet, FirstOrderRule, SecondOrderRule, SpatialRate};
pub use state::{PopulationState, SystemState};
pub use status::StatusSpace;

/// A position in the two-dimensional movement space.
pub type Point = [f64; 2];

#[inline]
pub fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}
