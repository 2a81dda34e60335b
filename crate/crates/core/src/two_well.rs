//! Two-status contagion in a two-dimensional double well, the reference
//! workload for comparing the three model levels.
//!
//! Agents diffuse in `U(x) = (x1^2 - 1)^2 + 7 x2^2`. Status index 0 ("1")
//! adopts status index 1 ("2") through contacts within radius 0.15 at rate
//! 0.1. The subpopulations are the two wells, represented by the core sets
//! `x1 <= -0.5` and `x1 > 0.5`. The observable is the critical transition
//! time: the first time a status-2 agent whose last core set was the left
//! one reaches the right one.

use crate::abm::{simulate_abm, AbmConfig, CriticalWatch, InitialCondition, SeedGroup};
use crate::domain::{
    Aabb, AdoptionRuleSet, PartitionKind, PopulationState, Potential, Region, RngStream, SecondOrderRule, SpatialPartition, StatusSpace,
};
use crate::error::Result;
use crate::experiments::Workload;
use crate::pdmm::{simulate_pdmm, PdmmConfig};
use crate::projection::{build_projected_model, LambdaEstimate, LambdaSource, MilestoneCounter, ProjectedModel};
use crate::smm::{channels_from_model, simulate_ssa_with, ChannelKind, JumpChannel, SsaOptions};

pub const CONTACT_RATE: f64 = 0.1;
pub const RADIUS: f64 = 0.15;
pub const N_AGENTS: usize = 100;
pub const SIGMAS: [f64; 2] = [0.6, 1.2];
pub const ABM_DT: f64 = 0.01;
pub const ODE_DT: f64 = 1e-3;
pub const SUSCEPTIBLE: usize = 0;
pub const CARRIER: usize = 1;
/// Horizon long enough that the critical transition essentially always
/// happens first.
pub const CRITICAL_HORIZON: f64 = 5_000.0;

pub fn statuses() -> StatusSpace {
    StatusSpace::new(["1", "2"]).expect("fixed labels are valid")
}

pub fn potential() -> Potential {
    Potential::double_well()
}

pub fn sampling_box() -> Aabb {
    Aabb::new([-2.5, -1.0], [2.5, 1.0]).expect("fixed box is valid")
}

pub fn core_sets() -> SpatialPartition {
    SpatialPartition::new(
        PartitionKind::CoreSets,
        vec![Region::half_plane_x(-0.5, true), Region::half_plane_x(0.5, false)],
        sampling_box(),
    )
    .expect("fixed core sets are valid")
}

/// The two wells `x1 <= 0` and `x1 > 0` as a full partition.
pub fn wells() -> SpatialPartition {
    SpatialPartition::new(
        PartitionKind::FullPartition,
        vec![Region::half_plane_x(0.0, true), Region::half_plane_x(0.0, false)],
        sampling_box(),
    )
    .expect("fixed wells are valid")
}

pub fn rules(contact_rate: f64) -> AdoptionRuleSet {
    AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(SUSCEPTIBLE, CARRIER, contact_rate, RADIUS)])
}

pub fn critical_watch() -> CriticalWatch {
    CriticalWatch {
        status: CARRIER,
        from: 0,
        to: 1,
    }
}

pub fn critical_channel() -> ChannelKind {
    ChannelKind::SpatialJump {
        status: CARRIER,
        from: 0,
        to: 1,
    }
}

/// ABM with `n_agents` drawn from the stationary density and `carriers`
/// status-2 agents placed in the left core set.
pub fn abm_config(sigma: f64, n_agents: usize, carriers: usize, contact_rate: f64, t_end: f64) -> AbmConfig {
    AbmConfig {
        n_status: 2,
        sigma,
        dt: ABM_DT,
        t_end,
        potential: potential(),
        rules: rules(contact_rate),
        initial: InitialCondition::Stationary {
            n_agents,
            background: SUSCEPTIBLE,
            seeds: vec![SeedGroup {
                status: CARRIER,
                count: carriers,
                region: Region::half_plane_x(-0.5, true),
            }],
            bounds: sampling_box(),
        },
        milestones: Some(core_sets()),
        snapshot_every: None,
        stop_on: Some(critical_watch()),
    }
}

/// Milestone statistics of a pure-diffusion run of `n_agents` for
/// `t_calib` time units.
pub fn calibrate(sigma: f64, n_agents: usize, t_calib: f64, stream: RngStream) -> Result<LambdaEstimate> {
    let mut config = abm_config(sigma, n_agents, 0, 0.0, t_calib);
    config.rules = AdoptionRuleSet::default();
    config.stop_on = None;
    let traj = simulate_abm(&config, &mut stream.rng())?;
    let mut counter = MilestoneCounter::new(2, 2);
    counter.add(&traj)?;
    Ok(counter.estimate(false))
}

pub fn projected_model(lambda: &LambdaEstimate, contact_rate: f64, n_samples: usize, stream: RngStream) -> Result<ProjectedModel> {
    build_projected_model(
        &core_sets(),
        statuses(),
        &rules(contact_rate),
        LambdaSource::Estimated(lambda),
        n_samples,
        stream,
    )
}

/// `carriers` status-2 agents in subpopulation 0, the rest status 1 split
/// evenly between the wells.
pub fn initial_population(n_agents: usize, carriers: usize) -> PopulationState<u32> {
    let n = n_agents as u32;
    let c = carriers as u32;
    let left = n / 2;
    PopulationState::from_rows(&[vec![left - c, n - left], vec![c, 0]]).expect("two by two rows")
}

pub fn smm_critical_time(channels: &[JumpChannel], n0: &PopulationState<u32>, t_end: f64, stream: RngStream) -> Result<Option<f64>> {
    let opts = SsaOptions {
        stop_on: Some(critical_channel()),
        log_only: Some(critical_channel()),
    };
    let traj = simulate_ssa_with(channels, n0, t_end, &opts, &mut stream.rng())?;
    Ok(traj.events.first().map(|e| e.time))
}

pub fn pdmm_critical_time(
    model: &ProjectedModel,
    n0: &PopulationState<u32>,
    t_end: f64,
    ode_dt: f64,
    stream: RngStream,
) -> Result<Option<f64>> {
    let mut config = PdmmConfig::from_model(model, n0.to_real(), t_end, ode_dt);
    config.record_every = None;
    config.stop_on = Some((CARRIER, 0, 1));
    let traj = simulate_pdmm(&config, &mut [], &mut stream.rng())?;
    Ok(crate::pdmm::critical_transition_time_pdmm(&traj, CARRIER, 0, 1))
}

pub fn abm_critical_time(sigma: f64, n_agents: usize, t_end: f64, stream: RngStream) -> Result<Option<f64>> {
    let config = abm_config(sigma, n_agents, 1, CONTACT_RATE, t_end);
    let traj = simulate_abm(&config, &mut stream.rng())?;
    Ok(crate::abm::critical_transition_time_abm(&traj, &critical_watch()))
}

/// Same physical scenario at any population size: the contact constant
/// scales with `N_AGENTS / n_agents` and the carrier count with
/// `n_agents / N_AGENTS`, so densities and time scales are unchanged.
pub fn scaled_contact_rate(n_agents: usize) -> f64 {
    CONTACT_RATE * N_AGENTS as f64 / n_agents as f64
}

pub fn scaled_carriers(n_agents: usize) -> usize {
    (n_agents / N_AGENTS).max(1)
}

fn scaled_model(model: &ProjectedModel, n_agents: usize) -> ProjectedModel {
    let mut m = model.clone();
    let factor = N_AGENTS as f64 / n_agents as f64;
    for c in &mut m.contact {
        c.c = c.c.map(|v| v * factor);
        c.gamma_hat.iter_mut().for_each(|g| *g *= factor);
    }
    m
}

pub fn bench_abm(sigma: f64, n_agents: usize, t_end: f64, stream: RngStream) -> Result<Workload> {
    let mut config = abm_config(sigma, n_agents, scaled_carriers(n_agents), scaled_contact_rate(n_agents), t_end);
    config.stop_on = None;
    let traj = simulate_abm(&config, &mut stream.rng())?;
    Ok(Workload {
        events: (traj.events.len() + traj.milestones.len()) as u64,
        steps: traj.steps as u64,
    })
}

pub fn bench_smm(model: &ProjectedModel, n_agents: usize, t_end: f64, stream: RngStream) -> Result<Workload> {
    let channels = channels_from_model(&scaled_model(model, n_agents));
    let n0 = initial_population(n_agents, scaled_carriers(n_agents));
    let traj = simulate_ssa_with(&channels, &n0, t_end, &SsaOptions::default(), &mut stream.rng())?;
    Ok(Workload {
        events: traj.events.len() as u64,
        steps: 0,
    })
}

pub fn bench_pdmm(model: &ProjectedModel, n_agents: usize, t_end: f64, ode_dt: f64, stream: RngStream) -> Result<Workload> {
    let n0 = initial_population(n_agents, scaled_carriers(n_agents)).to_real();
    let mut config = PdmmConfig::from_model(&scaled_model(model, n_agents), n0, t_end, ode_dt);
    config.record_every = None;
    let traj = simulate_pdmm(&config, &mut [], &mut stream.rng())?;
    Ok(Workload {
        events: traj.jumps.len() as u64,
        steps: traj.steps as u64,
    })
}
