//! Agent-based model: Euler-Maruyama diffusion of every agent in a potential
//! landscape, coupled to stochastic status adoptions scheduled with a
//! temporal Gillespie scheme (propensities frozen over each Euler step).

mod grid;
mod propensity;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

pub use grid::NeighborGrid;
pub use propensity::{total_adoption_propensity, AdoptionChannel, AdoptionPropensities, PropensityEngine};

use crate::domain::{Aabb, AdoptionRuleSet, Point, PopulationState, Potential, Region, SpatialPartition, SystemState};
use crate::error::{Error, Result};

/// Single-step adoption probability above which the step size is flagged.
pub const MAX_STEP_EVENT_PROBABILITY: f64 = 0.1;

/// Inverse temperature of the stationary density of
/// `dx = -(sigma/2)^2 grad U dt + sigma dB`, which is `exp(-U / 2)` for
/// every sigma.
pub const STATIONARY_BETA: f64 = 0.5;

/// `count` agents of `status` placed in `region`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedGroup {
    pub status: usize,
    pub count: usize,
    pub region: Region,
}

/// How the initial microscale state is produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Explicit {
        state: SystemState,
    },
    /// Positions drawn from the stationary density of the motion inside
    /// `bounds`. Seed groups are placed first (conditioned on their region);
    /// the remaining agents get `background` status.
    Stationary {
        n_agents: usize,
        background: usize,
        #[serde(default)]
        seeds: Vec<SeedGroup>,
        bounds: Aabb,
    },
}

impl InitialCondition {
    pub fn realize<R: Rng + ?Sized>(&self, potential: &Potential, n_status: usize, rng: &mut R) -> Result<SystemState> {
        match self {
            Self::Explicit { state } => {
                let mut s = SystemState::new(state.positions.clone(), state.statuses.clone(), n_status)?;
                s.time = 0.0;
                Ok(s)
            }
            Self::Stationary {
                n_agents,
                background,
                seeds,
                bounds,
            } => {
                let seeded: usize = seeds.iter().map(|g| g.count).sum();
                if seeded > *n_agents {
                    return Err(Error::Config(format!("{seeded} seeded agents exceed n_agents = {n_agents}")));
                }
                let mut positions = Vec::with_capacity(*n_agents);
                let mut statuses = Vec::with_capacity(*n_agents);
                for g in seeds {
                    if g.region.clip(bounds).is_none() {
                        return Err(Error::Config(format!("seed region {:?} misses the sampling box", g.region)));
                    }
                    for _ in 0..g.count {
                        positions.push(potential.sample_gibbs(STATIONARY_BETA, bounds, |x| g.region.contains(x), rng));
                        statuses.push(g.status);
                    }
                }
                while positions.len() < *n_agents {
                    positions.push(potential.sample_gibbs(STATIONARY_BETA, bounds, |_| true, rng));
                    statuses.push(*background);
                }
                SystemState::new(positions, statuses, n_status)
            }
        }
    }
}

/// Stop condition / observable: an agent of `status` whose last visited
/// core set is `from` enters core set `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalWatch {
    pub status: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone)]
pub struct AbmConfig {
    pub n_status: usize,
    pub sigma: f64,
    pub dt: f64,
    pub t_end: f64,
    pub potential: Potential,
    pub rules: AdoptionRuleSet,
    pub initial: InitialCondition,
    /// Core sets used for milestoning; `None` disables the milestone log.
    pub milestones: Option<SpatialPartition>,
    /// Record a full snapshot every this many steps.
    pub snapshot_every: Option<usize>,
    /// End the run at the first firing of this watch.
    pub stop_on: Option<CriticalWatch>,
}

impl AbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt = {} must be > 0", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end = {} must be > 0", self.t_end)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma = {} must be > 0", self.sigma)));
        }
        self.rules.validate(self.n_status)?;
        if let (Some(w), Some(p)) = (&self.stop_on, &self.milestones) {
            if w.from >= p.len() || w.to >= p.len() || w.status >= self.n_status {
                return Err(Error::Config(format!("watch {w:?} out of range")));
            }
        } else if self.stop_on.is_some() {
            return Err(Error::Config("stop_on requires milestone core sets".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdoptionEvent {
    pub time: f64,
    pub agent: usize,
    pub from: usize,
    pub to: usize,
}

/// An agent entered core set `to`; `from` was its previous milestone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MilestoneEvent {
    pub time: f64,
    pub agent: usize,
    pub status: usize,
    pub from: Option<usize>,
    pub to: usize,
}

#[derive(Debug, Clone)]
pub struct AbmTrajectory {
    pub n_status: usize,
    pub n_sets: usize,
    pub initial: SystemState,
    pub initial_milestones: Vec<Option<usize>>,
    pub events: Vec<AdoptionEvent>,
    pub milestones: Vec<MilestoneEvent>,
    pub snapshots: Vec<SystemState>,
    pub final_state: SystemState,
    /// Time the run actually ended (earlier than `t_end` on a stop).
    pub end_time: f64,
    pub steps: usize,
    /// Largest single-step event probability `total_rate * dt` observed.
    pub max_step_probability: f64,
}

/// A change in one agent's `(status, milestone)` label, in time order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelChange {
    Status { time: f64, agent: usize, to: usize },
    Milestone { time: f64, agent: usize, to: usize },
}

impl LabelChange {
    pub fn time(&self) -> f64 {
        match *self {
            Self::Status { time, .. } | Self::Milestone { time, .. } => time,
        }
    }
}

impl AbmTrajectory {
    /// Adoption and milestone changes merged in time order. At equal times
    /// adoptions come first: they happen inside a step, milestones at its end.
    pub fn label_changes(&self) -> Vec<LabelChange> {
        let mut out = Vec::with_capacity(self.events.len() + self.milestones.len());
        let (mut a, mut b) = (0, 0);
        while a < self.events.len() || b < self.milestones.len() {
            let take_event = match (self.events.get(a), self.milestones.get(b)) {
                (Some(e), Some(m)) => e.time <= m.time,
                (Some(_), None) => true,
                _ => false,
            };
            if take_event {
                let e = self.events[a];
                out.push(LabelChange::Status {
                    time: e.time,
                    agent: e.agent,
                    to: e.to,
                });
                a += 1;
            } else {
                let m = self.milestones[b];
                out.push(LabelChange::Milestone {
                    time: m.time,
                    agent: m.agent,
                    to: m.to,
                });
                b += 1;
            }
        }
        out
    }

    /// Projected trajectory: counts of agents per (status, last visited core
    /// set) as a piecewise-constant path. Agents without a milestone yet are
    /// not counted.
    pub fn projected_path(&self) -> Vec<PopulationState<u32>> {
        let mut status = self.initial.statuses.clone();
        let mut milestone = self.initial_milestones.clone();
        let mut n = PopulationState::<u32>::zeros(self.n_status, self.n_sets.max(1));
        if self.n_sets == 0 {
            return Vec::new();
        }
        for (s, m) in status.iter().zip(&milestone) {
            if let Some(k) = *m {
                n.set(*s, k, n.get(*s, k) + 1);
            }
        }
        let mut path = vec![n.clone()];
        for change in self.label_changes() {
            let (agent, time) = match change {
                LabelChange::Status { agent, time, .. } | LabelChange::Milestone { agent, time, .. } => (agent, time),
            };
            if let Some(k) = milestone[agent] {
                let s = status[agent];
                n.set(s, k, n.get(s, k) - 1);
            }
            match change {
                LabelChange::Status { to, .. } => status[agent] = to,
                LabelChange::Milestone { to, .. } => milestone[agent] = Some(to),
            }
            if let Some(k) = milestone[agent] {
                let s = status[agent];
                n.set(s, k, n.get(s, k) + 1);
            }
            n.time = time;
            path.push(n.clone());
        }
        path
    }
}

/// One Euler-Maruyama step `x <- x - (sigma/2)^2 grad U(x) dt + sigma sqrt(dt) xi`
/// for every agent. Statuses are untouched.
pub fn step_euler_maruyama<R: Rng + ?Sized>(
    state: &mut SystemState,
    potential: &Potential,
    sigma: f64,
    dt: f64,
    rng: &mut R,
) -> Result<()> {
    let drift = 0.25 * sigma * sigma * dt;
    let noise = sigma * dt.sqrt();
    for x in &mut state.positions {
        let g = potential.gradient(*x);
        if !(g[0].is_finite() && g[1].is_finite()) {
            return Err(Error::NonFiniteGradient { x: x[0], y: x[1] });
        }
        let xi0: f64 = StandardNormal.sample(rng);
        let xi1: f64 = StandardNormal.sample(rng);
        x[0] += -drift * g[0] + noise * xi0;
        x[1] += -drift * g[1] + noise * xi1;
    }
    state.time += dt;
    Ok(())
}

/// Samples one ABM trajectory.
pub fn simulate_abm<R: Rng + ?Sized>(config: &AbmConfig, rng: &mut R) -> Result<AbmTrajectory> {
    config.validate()?;
    let mut state = config.initial.realize(&config.potential, config.n_status, rng)?;
    let initial = state.clone();
    let n_agents = state.n_agents();
    let n_sets = config.milestones.as_ref().map_or(0, SpatialPartition::len);
    let locate = |x: Point| config.milestones.as_ref().and_then(|p| p.locate(x));
    let mut milestone: Vec<Option<usize>> = state.positions.iter().map(|&x| locate(x)).collect();
    let initial_milestones = milestone.clone();

    let mut engine = PropensityEngine::new(&config.rules, config.n_status);
    let mut props = AdoptionPropensities::default();
    let mut events = Vec::new();
    let mut milestones = Vec::new();
    let mut snapshots = Vec::new();
    let has_rules = !config.rules.is_empty();

    let n_steps = (config.t_end / config.dt).ceil() as usize;
    let mut threshold: f64 = Exp1.sample(rng);
    let mut accumulated = 0.0;
    let mut max_step_probability = 0.0f64;
    let mut warned = false;
    let mut steps = 0;
    let mut stopped = false;

    for step in 0..n_steps {
        let t0 = step as f64 * config.dt;
        let h = config.dt.min(config.t_end - t0);
        if h <= 0.0 {
            break;
        }
        if has_rules {
            let mut elapsed = 0.0;
            let mut total = engine.total(&state, &config.rules);
            let p = total * h;
            max_step_probability = max_step_probability.max(p);
            if p > MAX_STEP_EVENT_PROBABILITY && !warned {
                warn!("adoption probability per step {p:.3} exceeds {MAX_STEP_EVENT_PROBABILITY}; consider a smaller dt");
                warned = true;
            }
            while total > 0.0 && accumulated + total * (h - elapsed) >= threshold {
                elapsed += (threshold - accumulated) / total;
                engine.evaluate(&state, &config.rules, &mut props);
                let target = rng.random::<f64>() * props.total;
                let ch = *props.select(target).expect("positive total implies a channel");
                state.statuses[ch.agent] = ch.to;
                events.push(AdoptionEvent {
                    time: t0 + elapsed,
                    agent: ch.agent,
                    from: ch.from,
                    to: ch.to,
                });
                accumulated = 0.0;
                threshold = Exp1.sample(rng);
                total = engine.total(&state, &config.rules);
            }
            if total > 0.0 {
                accumulated += total * (h - elapsed);
            }
        }

        step_euler_maruyama(&mut state, &config.potential, config.sigma, h, rng)?;
        let t1 = if step + 1 == n_steps {
            config.t_end
        } else {
            (step + 1) as f64 * config.dt
        };
        state.time = t1;
        steps += 1;

        if n_sets > 0 {
            for a in 0..n_agents {
                let Some(k) = locate(state.positions[a]) else { continue };
                if milestone[a] == Some(k) {
                    continue;
                }
                let ev = MilestoneEvent {
                    time: t1,
                    agent: a,
                    status: state.statuses[a],
                    from: milestone[a],
                    to: k,
                };
                milestone[a] = Some(k);
                milestones.push(ev);
                if let Some(w) = &config.stop_on {
                    if ev.status == w.status && ev.from == Some(w.from) && ev.to == w.to {
                        stopped = true;
                    }
                }
            }
        }
        if let Some(every) = config.snapshot_every {
            if every > 0 && steps % every == 0 {
                snapshots.push(state.clone());
            }
        }
        if stopped {
            break;
        }
    }

    let end_time = state.time;
    Ok(AbmTrajectory {
        n_status: config.n_status,
        n_sets,
        initial,
        initial_milestones,
        events,
        milestones,
        snapshots,
        final_state: state,
        end_time,
        steps,
        max_step_probability,
    })
}

/// First time an agent of `watch.status` with last milestone `watch.from`
/// enters `watch.to`.
pub fn critical_transition_time_abm(traj: &AbmTrajectory, watch: &CriticalWatch) -> Option<f64> {
    traj.milestones
        .iter()
        .find(|m| m.status == watch.status && m.from == Some(watch.from) && m.to == watch.to)
        .map(|m| m.time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Interval, PartitionKind, RngStream, SecondOrderRule};

    fn core_sets() -> SpatialPartition {
        SpatialPartition::new(
            PartitionKind::CoreSets,
            vec![Region::half_plane_x(-0.5, true), Region::half_plane_x(0.5, false)],
            Aabb::new([-2.5, -1.0], [2.5, 1.0]).unwrap(),
        )
        .unwrap()
    }

    fn base_config(initial: SystemState) -> AbmConfig {
        AbmConfig {
            n_status: 2,
            sigma: 1.2,
            dt: 0.01,
            t_end: 5.0,
            potential: Potential::double_well(),
            rules: AdoptionRuleSet::default(),
            initial: InitialCondition::Explicit { state: initial },
            milestones: Some(core_sets()),
            snapshot_every: None,
            stop_on: None,
        }
    }

    #[test]
    fn drift_only_step() {
        // U = (x1^2 - 1)^2, grad U(2, 0) = (24, 0): drift part 2 - 0.25 * 24 * 0.01.
        let p = Potential::DoubleWell { transverse: 0.0 };
        assert_eq!(p.gradient([2.0, 0.0]), [24.0, 0.0]);
        let mut s = SystemState::new(vec![[2.0, 0.0]], vec![0], 1).unwrap();
        let mut rng = RngStream::new(0, 0).rng();
        let mut replay = rng.clone();
        step_euler_maruyama(&mut s, &p, 1.0, 0.01, &mut rng).unwrap();
        let xi0: f64 = StandardNormal.sample(&mut replay);
        let xi1: f64 = StandardNormal.sample(&mut replay);
        assert!((s.positions[0][0] - (1.94 + 0.1 * xi0)).abs() < 1e-12);
        assert!((s.positions[0][1] - 0.1 * xi1).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_limit_stays_at_minimum() {
        let mut s = SystemState::new(vec![[1.0, 0.0]], vec![0], 1).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        for _ in 0..1000 {
            step_euler_maruyama(&mut s, &Potential::double_well(), 1e-9, 0.01, &mut rng).unwrap();
        }
        assert!((s.positions[0][0] - 1.0).abs() < 1e-6 && s.positions[0][1].abs() < 1e-6);
    }

    #[test]
    fn pure_brownian_displacement_is_centered() {
        let mut rng = RngStream::new(2, 0).rng();
        let n = 100_000;
        let sigma = 0.8;
        let mut s = SystemState::new(vec![[0.0, 0.0]; n], vec![0; n], 1).unwrap();
        step_euler_maruyama(&mut s, &Potential::Flat, sigma, 1.0, &mut rng).unwrap();
        let mean: f64 = s.positions.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        let var: f64 = s.positions.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = sigma / (n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean}");
        assert!((var - sigma * sigma).abs() < 0.02 * sigma * sigma, "var {var}");
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = SystemState::new(vec![[f64::NAN, 0.0]], vec![0], 1).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        let err = step_euler_maruyama(&mut s, &Potential::double_well(), 1.0, 0.01, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }));
    }

    #[test]
    fn empty_rules_keep_statuses() {
        let init = SystemState::new(vec![[-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]], vec![0, 1, 1], 2).unwrap();
        let cfg = base_config(init.clone());
        let traj = simulate_abm(&cfg, &mut RngStream::new(5, 0).rng()).unwrap();
        assert!(traj.events.is_empty());
        assert_eq!(traj.final_state.statuses, init.statuses);
        assert_eq!(traj.steps, 500);
        assert!((traj.end_time - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_contact_rate_never_adopts() {
        let init = SystemState::new(vec![[-1.0, 0.0], [-1.0, 0.01]], vec![0, 1], 2).unwrap();
        let mut cfg = base_config(init);
        cfg.rules = AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(0, 1, 0.0, 0.15)]);
        let traj = simulate_abm(&cfg, &mut RngStream::new(5, 0).rng()).unwrap();
        assert!(traj.events.is_empty());
    }

    #[test]
    fn events_are_time_ordered_and_conservative() {
        let n = 60;
        let mut cfg = base_config(SystemState::new(vec![], vec![], 2).unwrap());
        cfg.initial = InitialCondition::Stationary {
            n_agents: n,
            background: 0,
            seeds: vec![SeedGroup {
                status: 1,
                count: 5,
                region: Region::half_plane_x(-0.5, true),
            }],
            bounds: Aabb::new([-2.5, -1.0], [2.5, 1.0]).unwrap(),
        };
        cfg.rules = AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(0, 1, 2.0, 0.3)]);
        cfg.t_end = 3.0;
        let traj = simulate_abm(&cfg, &mut RngStream::new(8, 0).rng()).unwrap();
        assert!(!traj.events.is_empty());
        assert!(traj.events.windows(2).all(|w| w[0].time < w[1].time));
        let mut statuses = traj.initial.statuses.clone();
        for e in &traj.events {
            assert_ne!(e.from, e.to);
            assert_eq!(statuses[e.agent], e.from);
            statuses[e.agent] = e.to;
            let counts: usize = statuses.len();
            assert_eq!(counts, n);
        }
        assert_eq!(statuses, traj.final_state.statuses);
        let path = traj.projected_path();
        for w in path.windows(2) {
            assert!(w[0].time <= w[1].time);
        }
    }

    #[test]
    fn identical_seeds_reproduce() {
        let mut cfg = base_config(SystemState::new(vec![], vec![], 2).unwrap());
        cfg.initial = InitialCondition::Stationary {
            n_agents: 30,
            background: 0,
            seeds: vec![SeedGroup {
                status: 1,
                count: 1,
                region: Region::half_plane_x(-0.5, true),
            }],
            bounds: Aabb::new([-2.5, -1.0], [2.5, 1.0]).unwrap(),
        };
        cfg.rules = AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(0, 1, 1.0, 0.3)]);
        let a = simulate_abm(&cfg, &mut RngStream::new(9, 4).rng()).unwrap();
        let b = simulate_abm(&cfg, &mut RngStream::new(9, 4).rng()).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.milestones, b.milestones);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn critical_transition_of_single_carrier() {
        let init = SystemState::new(vec![[-1.0, 0.0]], vec![1], 2).unwrap();
        let mut cfg = base_config(init);
        cfg.t_end = 500.0;
        cfg.stop_on = Some(CriticalWatch { status: 1, from: 0, to: 1 });
        let traj = simulate_abm(&cfg, &mut RngStream::new(12, 0).rng()).unwrap();
        let t = critical_transition_time_abm(&traj, &cfg.stop_on.unwrap()).expect("transition within horizon");
        let entry = traj.milestones.iter().find(|m| m.to == 1).unwrap();
        assert_eq!(t, entry.time);
        assert_eq!(traj.end_time, t);
        assert!(traj.final_state.positions[0][0] > 0.5);
    }

    #[test]
    fn no_carrier_no_transition() {
        let init = SystemState::new(vec![[-1.0, 0.0], [1.0, 0.0]], vec![0, 0], 2).unwrap();
        let mut cfg = base_config(init);
        cfg.t_end = 50.0;
        let traj = simulate_abm(&cfg, &mut RngStream::new(2, 0).rng()).unwrap();
        assert_eq!(
            critical_transition_time_abm(&traj, &CriticalWatch { status: 1, from: 0, to: 1 }),
            None
        );
    }

    #[test]
    fn unassigned_agents_start_without_milestone() {
        let init = SystemState::new(vec![[0.0, 0.0], [-1.0, 0.0]], vec![1, 1], 2).unwrap();
        let cfg = base_config(init);
        let traj = simulate_abm(&cfg, &mut RngStream::new(3, 0).rng()).unwrap();
        assert_eq!(traj.initial_milestones, vec![None, Some(0)]);
        let _ = Interval::ALL;
    }
}
