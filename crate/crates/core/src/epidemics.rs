//! SEIRD epidemic scenarios on top of the PDMM.
//!
//! Statuses are `S, E, I, R, D`. Exposed and infected agents both transmit
//! with the same constant. Infection constants are per-capita: the phase
//! scaled `delta_SE` is divided by a fixed reference population per
//! subpopulation, so one infectious agent among `n_ref` susceptibles causes
//! `delta_SE` infections per day.
//!
//! Containment follows a three-phase state machine per subpopulation
//! (initial, strict, moderate); travel restrictions follow the first strict
//! phase anywhere and relax once every subpopulation has reached its
//! moderate phase. Once more than `h_R` agents are infected, the health
//! system is overloaded and the fatality rate is raised while keeping the
//! total outflow from `I` fixed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{PopulationState, RngStream, StatusSpace};
use crate::error::{Error, Result};
use crate::pdmm::{simulate_pdmm, PdmmConfig, PdmmHook, PdmmJump, PdmmTrajectory, PhaseChange};
use crate::projection::{ContactRate, ProjectedModel};
use crate::rates::{ContactTerm, FirstOrderTerm, JumpTerm, MassActionRates};

pub const S: usize = 0;
pub const E: usize = 1;
pub const I: usize = 2;
pub const R: usize = 3;
pub const D: usize = 4;
pub const STATUS_LABELS: [&str; 5] = ["S", "E", "I", "R", "D"];
/// Statuses allowed to travel.
pub const TRAVELLING: [usize; 3] = [S, E, R];

pub fn status_space() -> StatusSpace {
    StatusSpace::new(STATUS_LABELS).expect("fixed labels are valid")
}

fn default_m() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeirdParams {
    pub m: usize,
    /// Initial size of every subpopulation.
    pub population: Vec<f64>,
    /// Normalisation of the infection constants.
    pub n_ref: Vec<f64>,
    /// Exposed agents placed in subpopulation 0 at time 0.
    pub initial_exposed: f64,
    pub tau_ei: f64,
    pub delta_se: f64,
    pub delta_ir: f64,
    pub delta_id: f64,
    /// Fatality multiplier while the health system is overloaded.
    pub overload_factor: f64,
    pub kappa1: Vec<f64>,
    pub kappa2: Vec<f64>,
    pub h_i: Vec<f64>,
    pub h_r: Vec<f64>,
    /// Baseline travel rates `travel[k][l]`.
    pub travel: Vec<Vec<f64>>,
    pub travel_kappa1: Vec<Vec<f64>>,
    pub travel_kappa2: Vec<Vec<f64>>,
    pub horizon: f64,
    pub ode_dt: f64,
}

impl Default for SeirdParams {
    fn default() -> Self {
        let m = default_m();
        let pop = 10_000.0;
        let off = |v: f64| (0..m).map(|k| (0..m).map(|l| if k == l { 0.0 } else { v }).collect()).collect();
        Self {
            m,
            population: vec![pop; m],
            n_ref: vec![pop; m],
            initial_exposed: 1.0,
            tau_ei: 5.5,
            delta_se: 4.1 / 14.0,
            delta_ir: (1.0 - 0.014) / 14.0,
            delta_id: 0.014 / 14.0,
            overload_factor: 3.0,
            kappa1: vec![0.1; m],
            kappa2: vec![0.3, 0.4],
            h_i: vec![0.02 * pop; m],
            h_r: vec![0.1 * pop; m],
            travel: off(0.0003),
            travel_kappa1: off(0.05),
            travel_kappa2: off(0.5),
            horizon: 250.0,
            ode_dt: 0.01,
        }
    }
}

impl SeirdParams {
    /// Infection constant of S+I -> E+I (identical for S+E).
    pub fn delta_si(&self) -> f64 {
        self.delta_se
    }

    pub fn delta_id_overloaded(&self) -> f64 {
        self.overload_factor * self.delta_id
    }

    pub fn delta_ir_overloaded(&self) -> f64 {
        self.delta_ir + self.delta_id - self.delta_id_overloaded()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m;
        let bad = |what: String| Err(Error::Config(format!("SEIRD parameters: {what}")));
        for (name, v) in [
            ("population", &self.population),
            ("n_ref", &self.n_ref),
            ("kappa1", &self.kappa1),
            ("kappa2", &self.kappa2),
            ("h_i", &self.h_i),
            ("h_r", &self.h_r),
        ] {
            if v.len() != m {
                return bad(format!("{name} needs {m} entries"));
            }
        }
        for (name, t) in [
            ("travel", &self.travel),
            ("travel_kappa1", &self.travel_kappa1),
            ("travel_kappa2", &self.travel_kappa2),
        ] {
            if t.len() != m || t.iter().any(|r| r.len() != m) {
                return bad(format!("{name} must be {m} x {m}"));
            }
        }
        for k in 0..m {
            if !(0.0 < self.kappa1[k] && self.kappa1[k] < self.kappa2[k] && self.kappa2[k] < 1.0) {
                return bad(format!("need 0 < kappa1 < kappa2 < 1 in subpopulation {k}"));
            }
            if !(self.n_ref[k] > 0.0) || !(self.population[k] >= 0.0) {
                return bad(format!("population sizes of subpopulation {k} must be positive"));
            }
            if !(self.h_i[k] > 0.0) || !(self.h_r[k] > 0.0) {
                return bad(format!("thresholds of subpopulation {k} must be positive"));
            }
            for l in 0..m {
                if k == l {
                    continue;
                }
                let (a, b) = (self.travel_kappa1[k][l], self.travel_kappa2[k][l]);
                if !(0.0 < a && a < b && b < 1.0) {
                    return bad(format!("need 0 < travel kappa1 < kappa2 < 1 for pair ({k}, {l})"));
                }
                if !(self.travel[k][l] >= 0.0) {
                    return bad(format!("travel rate ({k}, {l}) must be >= 0"));
                }
            }
        }
        if !(self.tau_ei > 0.0) || !(self.delta_se >= 0.0) || !(self.delta_ir >= 0.0) || !(self.delta_id > 0.0) {
            return bad("rate constants must be positive".into());
        }
        if !(self.overload_factor > 1.0) || self.delta_ir_overloaded() < 0.0 {
            return bad("overload factor must exceed 1 and keep the recovery rate nonnegative".into());
        }
        if !(self.initial_exposed >= 0.0 && self.initial_exposed <= self.population[0]) {
            return bad("initial_exposed must fit in subpopulation 0".into());
        }
        if !(self.horizon > 0.0) || !(self.ode_dt > 0.0) {
            return bad("horizon and ode_dt must be positive".into());
        }
        Ok(())
    }

    /// One exposed agent in subpopulation 0, everybody else susceptible.
    pub fn initial_state(&self) -> PopulationState<f64> {
        let mut n = PopulationState::zeros(5, self.m);
        for k in 0..self.m {
            n.set(S, k, self.population[k]);
        }
        n.set(S, 0, self.population[0] - self.initial_exposed);
        n.set(E, 0, self.initial_exposed);
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Strict,
    Moderate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TravelPhase {
    Baseline,
    Restricted,
    Relaxed,
}

/// `phase scale * delta_SE / n_ref^(k)`.
pub fn infection_rate(k: usize, phase: Phase, params: &SeirdParams) -> f64 {
    let scale = match phase {
        Phase::Initial => 1.0,
        Phase::Strict => params.kappa1[k],
        Phase::Moderate => params.kappa2[k],
    };
    scale * params.delta_se / params.n_ref[k]
}

/// `(gamma_IR, gamma_ID)` in subpopulation `k`; overloaded only when
/// `N_I > h_R`.
pub fn outcome_rates(k: usize, n: &PopulationState<f64>, params: &SeirdParams) -> (f64, f64) {
    if n.get(I, k) > params.h_r[k] {
        (params.delta_ir_overloaded(), params.delta_id_overloaded())
    } else {
        (params.delta_ir, params.delta_id)
    }
}

/// Travel rate `k -> l` for the travelling statuses.
pub fn travel_rate(k: usize, l: usize, phase: TravelPhase, params: &SeirdParams) -> f64 {
    let scale = match phase {
        TravelPhase::Baseline => 1.0,
        TravelPhase::Restricted => params.travel_kappa1[k][l],
        TravelPhase::Relaxed => params.travel_kappa2[k][l],
    };
    scale * params.travel[k][l]
}

/// Per-subpopulation containment state machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseController {
    pub phases: Vec<Phase>,
    pub t1: Vec<Option<f64>>,
    pub t2: Vec<Option<f64>>,
}

impl PhaseController {
    pub fn new(m: usize) -> Self {
        Self {
            phases: vec![Phase::Initial; m],
            t1: vec![None; m],
            t2: vec![None; m],
        }
    }

    /// Advances the state machine; returns the subpopulations that changed.
    pub fn update_phases(&mut self, n: &PopulationState<f64>, t: f64, h_i: &[f64]) -> Vec<(usize, Phase)> {
        let mut changed = Vec::new();
        for (k, &h) in h_i.iter().enumerate() {
            let infected = n.get(I, k);
            match self.phases[k] {
                Phase::Initial if infected >= h => {
                    self.phases[k] = Phase::Strict;
                    self.t1[k] = Some(t);
                    changed.push((k, Phase::Strict));
                }
                Phase::Strict if infected < 0.5 * h => {
                    self.phases[k] = Phase::Moderate;
                    self.t2[k] = Some(t);
                    changed.push((k, Phase::Moderate));
                }
                _ => {}
            }
        }
        changed
    }

    /// First strict phase anywhere.
    pub fn tau1(&self) -> Option<f64> {
        self.t1.iter().flatten().copied().reduce(f64::min)
    }

    /// Last moderate phase, once every subpopulation has one.
    pub fn tau2(&self) -> Option<f64> {
        self.t2.iter().copied().collect::<Option<Vec<f64>>>()?.into_iter().reduce(f64::max)
    }

    pub fn travel_phase(&self, t: f64) -> TravelPhase {
        match (self.tau1(), self.tau2()) {
            (None, _) => TravelPhase::Baseline,
            (Some(t1), _) if t <= t1 => TravelPhase::Baseline,
            (Some(_), Some(t2)) if t > t2 => TravelPhase::Relaxed,
            _ => TravelPhase::Restricted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    /// No measures: every rate stays at its baseline.
    NoMeasures = 1,
    /// Adaptive infection measures, constant travel.
    InfectionMeasures = 2,
    /// Adaptive infection and travel measures.
    Combined = 3,
}

impl TryFrom<u8> for Scenario {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Self::NoMeasures),
            2 => Ok(Self::InfectionMeasures),
            3 => Ok(Self::Combined),
            _ => Err(format!("scenario must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s as u8
    }
}

impl Scenario {
    pub fn adaptive_infection(self) -> bool {
        self != Self::NoMeasures
    }

    pub fn adaptive_travel(self) -> bool {
        self == Self::Combined
    }
}

/// Indices into the SEIRD rate table for in-place updates.
#[derive(Debug, Clone)]
struct Layout {
    /// Two contact terms (via E, via I) per subpopulation.
    contact: Vec<[usize; 2]>,
    /// `(I -> R, I -> D)` first-order terms per subpopulation.
    outcome: Vec<[usize; 2]>,
    /// `(k, l, index)` of every travel jump.
    travel: Vec<(usize, usize, usize)>,
}

/// Mass-action table at baseline rates, plus its layout.
fn seird_rates(params: &SeirdParams) -> (MassActionRates, Layout) {
    let m = params.m;
    let mut rates = MassActionRates::empty(5, m);
    let mut layout = Layout {
        contact: Vec::new(),
        outcome: Vec::new(),
        travel: Vec::new(),
    };
    for k in 0..m {
        let g = infection_rate(k, Phase::Initial, params);
        let base = rates.contact.len();
        rates.contact.push(ContactTerm {
            from: S,
            to: E,
            via: E,
            subpop: k,
            rate: g,
        });
        rates.contact.push(ContactTerm {
            from: S,
            to: E,
            via: I,
            subpop: k,
            rate: g,
        });
        layout.contact.push([base, base + 1]);
    }
    for k in 0..m {
        rates.first_order.push(FirstOrderTerm {
            from: E,
            to: I,
            subpop: k,
            rate: 1.0 / params.tau_ei,
        });
        let base = rates.first_order.len();
        rates.first_order.push(FirstOrderTerm {
            from: I,
            to: R,
            subpop: k,
            rate: params.delta_ir,
        });
        rates.first_order.push(FirstOrderTerm {
            from: I,
            to: D,
            subpop: k,
            rate: params.delta_id,
        });
        layout.outcome.push([base, base + 1]);
    }
    for k in 0..m {
        for l in 0..m {
            if k == l {
                continue;
            }
            for status in TRAVELLING {
                layout.travel.push((k, l, rates.jumps.len()));
                rates.jumps.push(JumpTerm {
                    status,
                    from: k,
                    to: l,
                    rate: travel_rate(k, l, TravelPhase::Baseline, params),
                });
            }
        }
    }
    (rates, layout)
}

/// SEIRD model at baseline rates as a [`ProjectedModel`], for the SMM and
/// for export. Infection, outcome and travel constants are taken as given.
pub fn seird_model(params: &SeirdParams) -> Result<ProjectedModel> {
    params.validate()?;
    let m = params.m;
    let mut lambda = vec![vec![vec![0.0; m]; m]; 5];
    for status in TRAVELLING {
        for k in 0..m {
            for l in 0..m {
                if k != l {
                    lambda[status][k][l] = travel_rate(k, l, TravelPhase::Baseline, params);
                }
            }
        }
    }
    let mut gamma1 = vec![vec![vec![0.0; m]; 5]; 5];
    gamma1[E][I] = vec![1.0 / params.tau_ei; m];
    gamma1[I][R] = vec![params.delta_ir; m];
    gamma1[I][D] = vec![params.delta_id; m];
    let g: Vec<f64> = (0..m).map(|k| infection_rate(k, Phase::Initial, params)).collect();
    let contact = vec![
        ContactRate {
            from: S,
            to: E,
            via: E,
            c: None,
            gamma_hat: g.clone(),
        },
        ContactRate {
            from: S,
            to: E,
            via: I,
            c: None,
            gamma_hat: g,
        },
    ];
    ProjectedModel::macroscopic(status_space(), m, lambda, gamma1, contact)
}

/// PDMM hook applying the scenario's rate rules.
#[derive(Debug, Clone)]
pub struct SeirdController {
    pub params: SeirdParams,
    pub scenario: Scenario,
    pub phases: PhaseController,
    layout: Layout,
    overloaded: Vec<bool>,
    travel: TravelPhase,
}

impl SeirdController {
    fn refresh(&mut self, t: f64, n: &PopulationState<f64>, rates: &mut MassActionRates, log: &mut Vec<PhaseChange>) {
        let p = &self.params;
        if self.scenario.adaptive_infection() {
            for (k, phase) in self.phases.update_phases(n, t, &p.h_i) {
                let g = infection_rate(k, phase, p);
                for idx in self.layout.contact[k] {
                    rates.contact[idx].rate = g;
                }
                let label = match phase {
                    Phase::Initial => "initial",
                    Phase::Strict => "strict",
                    Phase::Moderate => "moderate",
                };
                log.push(PhaseChange {
                    time: t,
                    subpop: k,
                    phase: label.into(),
                });
            }
        }
        for k in 0..p.m {
            let over = n.get(I, k) > p.h_r[k];
            if over != self.overloaded[k] {
                self.overloaded[k] = over;
                let (ir, id) = outcome_rates(k, n, p);
                let [a, b] = self.layout.outcome[k];
                rates.first_order[a].rate = ir;
                rates.first_order[b].rate = id;
                let label = if over { "overloaded" } else { "capacity" };
                log.push(PhaseChange {
                    time: t,
                    subpop: k,
                    phase: label.into(),
                });
            }
        }
        if self.scenario.adaptive_travel() {
            let travel = self.phases.travel_phase(t);
            if travel != self.travel {
                self.travel = travel;
                for &(k, l, idx) in &self.layout.travel {
                    rates.jumps[idx].rate = travel_rate(k, l, travel, p);
                }
            }
        }
    }
}

impl PdmmHook for SeirdController {
    fn on_step(&mut self, t: f64, n: &PopulationState<f64>, rates: &mut MassActionRates, phases: &mut Vec<PhaseChange>) {
        self.refresh(t, n, rates, phases);
    }

    fn on_jump(&mut self, jump: &PdmmJump, n: &PopulationState<f64>, rates: &mut MassActionRates, phases: &mut Vec<PhaseChange>) {
        self.refresh(jump.time, n, rates, phases);
    }
}

/// Rate table, controller and PDMM configuration for one scenario run.
pub fn scenario_setup(scenario: Scenario, params: &SeirdParams) -> Result<(PdmmConfig, SeirdController)> {
    params.validate()?;
    let (rates, layout) = seird_rates(params);
    let config = PdmmConfig {
        rates,
        n0: params.initial_state(),
        t_end: params.horizon,
        ode_dt: params.ode_dt,
        record_every: None,
        stop_on: None,
    };
    let controller = SeirdController {
        params: params.clone(),
        scenario,
        phases: PhaseController::new(params.m),
        layout,
        overloaded: vec![false; params.m],
        travel: TravelPhase::Baseline,
    };
    Ok((config, controller))
}

#[derive(Debug, Clone)]
pub struct ScenarioReplica {
    pub replica: usize,
    /// First exposed agent moving from subpopulation 0 to 1.
    pub critical_time: Option<f64>,
    pub final_state: PopulationState<f64>,
    pub t1: Vec<Option<f64>>,
    pub t2: Vec<Option<f64>>,
    pub trajectory: Option<PdmmTrajectory>,
}

/// Runs one replica with its own stream. `record_every` keeps the state
/// path at that stride (in Euler steps).
pub fn run_scenario_replica(
    scenario: Scenario,
    params: &SeirdParams,
    stream: RngStream,
    replica: usize,
    record_every: Option<usize>,
) -> Result<ScenarioReplica> {
    let (mut config, mut controller) = scenario_setup(scenario, params)?;
    config.record_every = record_every;
    let mut rng = stream.rng();
    let traj = simulate_pdmm(&config, &mut [&mut controller], &mut rng)?;
    let critical_time = traj
        .jumps
        .iter()
        .find(|j| j.status == E && j.from == 0 && j.to == 1)
        .map(|j| j.time);
    Ok(ScenarioReplica {
        replica,
        critical_time,
        final_state: traj.final_state.clone(),
        t1: controller.phases.t1.clone(),
        t2: controller.phases.t2.clone(),
        trajectory: record_every.map(|_| traj),
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioResults {
    pub scenario: Scenario,
    pub params: SeirdParams,
    pub seed: u64,
    pub replicas: Vec<ScenarioReplica>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub n_replicas: usize,
    pub mean_final_dead_fraction: f64,
    pub dead_fraction_stderr: f64,
    /// Mean critical time over replicas where it occurred.
    pub mean_critical_time: Option<f64>,
    pub critical_time_stderr: Option<f64>,
    pub no_transition_fraction: f64,
}

impl ScenarioResults {
    pub fn summary(&self) -> ScenarioSummary {
        let dead: Vec<f64> = self
            .replicas
            .iter()
            .map(|r| {
                let total = r.final_state.total();
                (0..r.final_state.n_subpop()).map(|k| r.final_state.get(D, k)).sum::<f64>() / total
            })
            .collect();
        let crit: Vec<f64> = self.replicas.iter().filter_map(|r| r.critical_time).collect();
        let (dead_mean, dead_se) = crate::experiments::mean_stderr(&dead).unwrap_or((f64::NAN, f64::NAN));
        let c = crate::experiments::mean_stderr(&crit);
        let n = self.replicas.len();
        ScenarioSummary {
            scenario: self.scenario,
            n_replicas: n,
            mean_final_dead_fraction: dead_mean,
            dead_fraction_stderr: dead_se,
            mean_critical_time: c.map(|x| x.0),
            critical_time_stderr: c.map(|x| x.1),
            no_transition_fraction: if n == 0 { f64::NAN } else { (n - crit.len()) as f64 / n as f64 },
        }
    }
}

/// Runs `n_replicas` independent replicas in parallel; replica `r` uses
/// stream `(seed, r)`, so results do not depend on the thread count.
pub fn run_scenario(scenario: Scenario, params: &SeirdParams, n_replicas: usize, seed: u64) -> Result<ScenarioResults> {
    params.validate()?;
    let replicas = (0..n_replicas)
        .into_par_iter()
        .map(|r| run_scenario_replica(scenario, params, RngStream::new(seed, r as u64), r, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioResults {
        scenario,
        params: params.clone(),
        seed,
        replicas,
    })
}
