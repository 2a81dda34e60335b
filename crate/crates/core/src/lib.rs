//! Multiscale simulation of spatio-temporal population dynamics.
//!
//! Three model levels share one set of domain types:
//!
//! * [`abm`]: agents diffuse in a potential landscape and change status
//!   through first-order (spontaneous) and second-order (contact) adoptions.
//! * [`smm`]: a stochastic metapopulation model, i.e. a Markov jump process on
//!   population-count matrices, sampled exactly with Gillespie's direct method.
//! * [`pdmm`]: a piecewise-deterministic metapopulation model where adoptions
//!   follow a mass-action ODE and only migrations between subpopulations
//!   remain stochastic.
//!
//! [`projection`] estimates the metapopulation rates from the agent-based
//! description, [`epidemics`] layers an adaptive SEIRD scenario on top of the
//! PDMM and [`experiments`] holds batch orchestration and comparison
//! statistics.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Rate tensors read more clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod abm;
pub mod domain;
pub mod epidemics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod pdmm;
pub mod projection;
pub mod rates;
pub mod smm;
pub mod two_well;

pub use domain::{
    distance_indicator, multinomial_weight, Aabb, AdoptionRuleSet, FirstOrderRule, PartitionKind, Point, PopulationState, Potential,
    Region, RngStream, SecondOrderRule, SpatialPartition, StatusSpace, SystemState,
};
pub use error::{Error, Result};
