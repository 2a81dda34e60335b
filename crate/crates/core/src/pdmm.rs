//! Piecewise-deterministic metapopulation model: adoptions inside each
//! subpopulation follow the mass-action ODE (forward Euler), migrations
//! between subpopulations stay stochastic and are scheduled with a temporal
//! Gillespie scheme over the Euler grid.
//!
//! Jump intensities use the guard `g(x) = x * 1[x >= 1]`, so a compartment
//! holding less than one agent never loses one to a jump.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::domain::PopulationState;
use crate::error::{Error, Result};
use crate::projection::ProjectedModel;
use crate::rates::MassActionRates;

/// Negative components down to this magnitude are clamped to zero.
pub const NEGATIVE_TOLERANCE: f64 = 1e-9;

/// Guarded jump intensity argument.
#[inline]
pub fn jump_guard(x: f64) -> f64 {
    if x >= 1.0 {
        x
    } else {
        0.0
    }
}

/// `dN/dt` of the adoption dynamics, written into `out` in the state layout.
pub fn adoption_drift(n: &PopulationState<f64>, rates: &MassActionRates, out: &mut [f64]) {
    rates.adoption_drift(n, out);
}

/// Closed-form solution of `dN2/dt = g N2 (n0 - N2)`.
pub fn logistic_solution(n0: f64, n2_initial: f64, gamma_hat: f64, t: f64) -> f64 {
    n0 / (1.0 + (n0 / n2_initial - 1.0) * (-gamma_hat * n0 * t).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdmmJump {
    pub time: f64,
    pub status: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub time: f64,
    pub subpop: usize,
    pub phase: String,
}

/// State observer that may rewrite the rate table mid-run.
///
/// `on_step` runs at the start of every Euler step, `on_jump` right after a
/// jump has been applied. Hooks run in registration order.
pub trait PdmmHook {
    fn on_step(&mut self, _t: f64, _n: &PopulationState<f64>, _rates: &mut MassActionRates, _phases: &mut Vec<PhaseChange>) {}

    fn on_jump(&mut self, _jump: &PdmmJump, _n: &PopulationState<f64>, _rates: &mut MassActionRates, _phases: &mut Vec<PhaseChange>) {}
}

#[derive(Debug, Clone)]
pub struct PdmmConfig {
    pub rates: MassActionRates,
    pub n0: PopulationState<f64>,
    pub t_end: f64,
    pub ode_dt: f64,
    /// Store the state every this many Euler steps; `None` keeps only the
    /// initial and final states.
    pub record_every: Option<usize>,
    /// End the run at the first jump of `(status, from, to)`.
    pub stop_on: Option<(usize, usize, usize)>,
}

impl PdmmConfig {
    pub fn from_model(model: &ProjectedModel, n0: PopulationState<f64>, t_end: f64, ode_dt: f64) -> Self {
        Self {
            rates: MassActionRates::from_model(model),
            n0,
            t_end,
            ode_dt,
            record_every: Some(1),
            stop_on: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ode_dt > 0.0 && self.ode_dt.is_finite()) {
            return Err(Error::Config(format!("ode_dt = {} must be > 0", self.ode_dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end = {} must be >= 0", self.t_end)));
        }
        if self.n0.n_status() != self.rates.n_status || self.n0.n_subpop() != self.rates.n_subpop {
            return Err(Error::Config("initial state shape does not match the rate table".into()));
        }
        self.n0.check_nonnegative()
    }
}

#[derive(Debug, Clone)]
pub struct PdmmTrajectory {
    /// Recorded states (time stamped), always including start and end.
    pub path: Vec<PopulationState<f64>>,
    pub jumps: Vec<PdmmJump>,
    pub phases: Vec<PhaseChange>,
    pub final_state: PopulationState<f64>,
    pub end_time: f64,
    pub steps: usize,
}

impl PdmmTrajectory {
    /// Linear interpolation of the recorded path on `times`.
    pub fn sample_on(&self, times: &[f64]) -> Vec<PopulationState<f64>> {
        let mut idx = 0;
        times
            .iter()
            .map(|&t| {
                while idx + 1 < self.path.len() && self.path[idx + 1].time <= t {
                    idx += 1;
                }
                let a = &self.path[idx];
                let mut s = a.clone();
                if let Some(b) = self.path.get(idx + 1) {
                    let span = b.time - a.time;
                    if span > 0.0 && t > a.time {
                        let w = ((t - a.time) / span).min(1.0);
                        for (v, (&x, &y)) in s.as_mut_slice().iter_mut().zip(a.as_slice().iter().zip(b.as_slice())) {
                            *v = x + w * (y - x);
                        }
                    }
                }
                s.time = t;
                s
            })
            .collect()
    }
}

struct Integrator {
    drift: Vec<f64>,
    intensities: Vec<f64>,
    mass: f64,
    mass_tol: f64,
}

impl Integrator {
    fn euler(&mut self, n: &mut PopulationState<f64>, rates: &MassActionRates, h: f64, t: f64) -> Result<()> {
        rates.adoption_drift(n, &mut self.drift);
        for (v, d) in n.as_mut_slice().iter_mut().zip(&self.drift) {
            *v += h * d;
        }
        self.check(n, t)
    }

    fn check(&self, n: &mut PopulationState<f64>, t: f64) -> Result<()> {
        let m = n.n_subpop();
        for (idx, v) in n.as_mut_slice().iter_mut().enumerate() {
            if *v < 0.0 || v.is_nan() {
                if *v >= -NEGATIVE_TOLERANCE {
                    *v = 0.0;
                } else {
                    return Err(Error::NegativeComponent {
                        status: idx / m,
                        subpop: idx % m,
                        value: *v,
                        time: t,
                    });
                }
            }
        }
        let drift = (n.total() - self.mass).abs();
        if drift > self.mass_tol {
            return Err(Error::InvalidState(format!("mass drifted by {drift:e} at t = {t}")));
        }
        Ok(())
    }

    fn total_intensity(&mut self, n: &PopulationState<f64>, rates: &MassActionRates) -> f64 {
        self.intensities.clear();
        let mut total = 0.0;
        for j in &rates.jumps {
            let v = j.rate * jump_guard(n.get(j.status, j.from));
            self.intensities.push(v);
            total += v;
        }
        total
    }
}

/// Samples one PDMM trajectory.
pub fn simulate_pdmm<R: Rng + ?Sized>(config: &PdmmConfig, hooks: &mut [&mut dyn PdmmHook], rng: &mut R) -> Result<PdmmTrajectory> {
    config.validate()?;
    let mut rates = config.rates.clone();
    let mut n = config.n0.clone();
    n.time = 0.0;
    let mass = n.total();
    let mut integ = Integrator {
        drift: vec![0.0; n.as_slice().len()],
        intensities: Vec::with_capacity(rates.jumps.len()),
        mass,
        mass_tol: NEGATIVE_TOLERANCE * mass.max(1.0),
    };
    let mut path = vec![n.clone()];
    let mut jumps = Vec::new();
    let mut phases = Vec::new();

    let n_steps = (config.t_end / config.ode_dt).ceil() as usize;
    let mut threshold: f64 = Exp1.sample(rng);
    let mut accumulated = 0.0;
    let mut steps = 0;
    let mut stopped = false;

    for step in 0..n_steps {
        let t0 = step as f64 * config.ode_dt;
        let t1 = if step + 1 == n_steps {
            config.t_end
        } else {
            (step + 1) as f64 * config.ode_dt
        };
        let h = t1 - t0;
        if h <= 0.0 {
            break;
        }
        for hook in hooks.iter_mut() {
            hook.on_step(t0, &n, &mut rates, &mut phases);
        }
        let mut elapsed = 0.0;
        let mut total = integ.total_intensity(&n, &rates);
        while total > 0.0 && accumulated + total * (h - elapsed) >= threshold {
            let tau = (threshold - accumulated) / total;
            integ.euler(&mut n, &rates, tau, t0 + elapsed + tau)?;
            elapsed += tau;
            let now = t0 + elapsed;
            n.time = now;

            // Re-evaluate at the event state so the guard holds exactly.
            let event_total = integ.total_intensity(&n, &rates);
            accumulated = 0.0;
            threshold = Exp1.sample(rng);
            if event_total > 0.0 {
                let mut target = rng.random::<f64>() * event_total;
                let mut chosen = None;
                for (idx, &v) in integ.intensities.iter().enumerate() {
                    if v > 0.0 {
                        chosen = Some(idx);
                        if target < v {
                            break;
                        }
                        target -= v;
                    }
                }
                let j = rates.jumps[chosen.expect("positive intensity implies a channel")];
                let src = n.get(j.status, j.from);
                n.set(j.status, j.from, src - 1.0);
                n.set(j.status, j.to, n.get(j.status, j.to) + 1.0);
                integ.check(&mut n, now)?;
                let jump = PdmmJump {
                    time: now,
                    status: j.status,
                    from: j.from,
                    to: j.to,
                };
                jumps.push(jump);
                for hook in hooks.iter_mut() {
                    hook.on_jump(&jump, &n, &mut rates, &mut phases);
                }
                if config.stop_on == Some((j.status, j.from, j.to)) {
                    stopped = true;
                    break;
                }
            }
            total = integ.total_intensity(&n, &rates);
        }
        steps += 1;
        if stopped {
            break;
        }
        if total > 0.0 {
            accumulated += total * (h - elapsed);
        }
        integ.euler(&mut n, &rates, h - elapsed, t1)?;
        n.time = t1;
        if let Some(every) = config.record_every {
            if every > 0 && steps % every == 0 && step + 1 != n_steps {
                path.push(n.clone());
            }
        }
    }
    path.push(n.clone());
    Ok(PdmmTrajectory {
        path,
        jumps,
        phases,
        end_time: n.time,
        final_state: n,
        steps,
    })
}

/// Time of the first `status` jump `from -> to`, if any.
pub fn critical_transition_time_pdmm(traj: &PdmmTrajectory, status: usize, from: usize, to: usize) -> Option<f64> {
    traj.jumps
        .iter()
        .find(|j| j.status == status && j.from == from && j.to == to)
        .map(|j| j.time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RngStream;
    use crate::rates::{ContactTerm, JumpTerm};

    fn single_well(gamma_hat: f64, n0: f64) -> PdmmConfig {
        let mut rates = MassActionRates::empty(2, 1);
        rates.contact.push(ContactTerm {
            from: 0,
            to: 1,
            via: 1,
            subpop: 0,
            rate: gamma_hat,
        });
        let state = PopulationState::from_rows(&[vec![n0 - 1.0], vec![1.0]]).unwrap();
        PdmmConfig {
            rates,
            n0: state,
            t_end: 1.0,
            ode_dt: 1e-3,
            record_every: Some(1),
            stop_on: None,
        }
    }

    fn max_rel_error(cfg: &PdmmConfig, gamma_hat: f64) -> f64 {
        let traj = simulate_pdmm(cfg, &mut [], &mut RngStream::new(0, 0).rng()).unwrap();
        let n0 = cfg.n0.total();
        traj.path
            .iter()
            .map(|s| {
                let exact = logistic_solution(n0, 1.0, gamma_hat, s.time);
                ((s.get(1, 0) - exact) / exact).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn logistic_growth_matches_closed_form() {
        // Contact scale of a single double-well basin: c = 0.1, b_kk ~ 0.016.
        let mut cfg = single_well(0.0016, 100.0);
        cfg.t_end = 60.0;
        let err = max_rel_error(&cfg, 0.0016);
        assert!(err <= 1e-3, "{err}");
        // The closed form as printed for N2(0) = 1.
        let printed = |t: f64| 100.0 / (1.0 + (-0.02f64 * 100.0 * t).exp() * (100.0 - 1.0));
        assert!((logistic_solution(100.0, 1.0, 0.02, 1.3) - printed(1.3)).abs() < 1e-12);
    }

    #[test]
    fn euler_is_first_order() {
        let mut errs = Vec::new();
        for dt in [4e-3, 2e-3, 1e-3, 5e-4] {
            let mut cfg = single_well(0.02, 100.0);
            cfg.t_end = 4.0;
            cfg.ode_dt = dt;
            errs.push(max_rel_error(&cfg, 0.02));
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..2.3).contains(&ratio), "{errs:?}");
        }
    }

    #[test]
    fn zero_rates_freeze_state() {
        let mut cfg = single_well(0.0, 10.0);
        cfg.rates.contact.clear();
        let traj = simulate_pdmm(&cfg, &mut [], &mut RngStream::new(0, 0).rng()).unwrap();
        assert_eq!(traj.final_state.as_slice(), cfg.n0.as_slice());
        assert!(traj.jumps.is_empty());
        assert_eq!(critical_transition_time_pdmm(&traj, 1, 0, 1), None);
    }

    #[test]
    fn guard_blocks_fractional_compartments() {
        let mut rates = MassActionRates::empty(1, 2);
        rates.jumps.push(JumpTerm {
            status: 0,
            from: 0,
            to: 1,
            rate: 100.0,
        });
        let n0 = PopulationState::from_rows(&[vec![0.999, 0.0]]).unwrap();
        let cfg = PdmmConfig {
            rates,
            n0,
            t_end: 10.0,
            ode_dt: 1e-2,
            record_every: None,
            stop_on: None,
        };
        let traj = simulate_pdmm(&cfg, &mut [], &mut RngStream::new(1, 0).rng()).unwrap();
        assert!(traj.jumps.is_empty());
        assert_eq!(traj.path.len(), 2);
    }

    #[test]
    fn jumps_conserve_mass_and_stop() {
        let mut cfg = single_well(0.01, 50.0);
        cfg.rates.n_subpop = 2;
        cfg.n0 = PopulationState::from_rows(&[vec![24.0, 25.0], vec![1.0, 0.0]]).unwrap();
        cfg.rates.contact.push(ContactTerm {
            from: 0,
            to: 1,
            via: 1,
            subpop: 1,
            rate: 0.01,
        });
        for i in 0..2 {
            cfg.rates.jumps.push(JumpTerm {
                status: i,
                from: 0,
                to: 1,
                rate: 0.05,
            });
            cfg.rates.jumps.push(JumpTerm {
                status: i,
                from: 1,
                to: 0,
                rate: 0.05,
            });
        }
        cfg.t_end = 50.0;
        cfg.ode_dt = 1e-2;
        let traj = simulate_pdmm(&cfg, &mut [], &mut RngStream::new(9, 0).rng()).unwrap();
        assert!(!traj.jumps.is_empty());
        for s in &traj.path {
            assert!((s.total() - 50.0).abs() <= 1e-9 * 50.0);
            assert!(s.as_slice().iter().all(|&v| v >= 0.0));
        }
        cfg.stop_on = Some((1, 0, 1));
        let traj = simulate_pdmm(&cfg, &mut [], &mut RngStream::new(9, 0).rng()).unwrap();
        let t = critical_transition_time_pdmm(&traj, 1, 0, 1).unwrap();
        assert_eq!(traj.end_time, t);
        assert_eq!(traj.jumps.last().unwrap().time, t);
    }

    struct Halver {
        fired: bool,
    }

    impl PdmmHook for Halver {
        fn on_step(&mut self, t: f64, n: &PopulationState<f64>, rates: &mut MassActionRates, phases: &mut Vec<PhaseChange>) {
            if !self.fired && n.get(1, 0) >= 50.0 {
                self.fired = true;
                rates.contact[0].rate = 0.0;
                phases.push(PhaseChange {
                    time: t,
                    subpop: 0,
                    phase: "frozen".into(),
                });
            }
        }
    }

    #[test]
    fn hooks_rewrite_rates_mid_run() {
        let mut cfg = single_well(0.02, 100.0);
        cfg.t_end = 10.0;
        let mut hook = Halver { fired: false };
        let traj = simulate_pdmm(&cfg, &mut [&mut hook], &mut RngStream::new(0, 0).rng()).unwrap();
        assert_eq!(traj.phases.len(), 1);
        let v = traj.final_state.get(1, 0);
        assert!((50.0..52.0).contains(&v), "{v}");
    }

    #[test]
    fn negative_overshoot_aborts() {
        let mut rates = MassActionRates::empty(2, 1);
        rates.first_order.push(crate::rates::FirstOrderTerm {
            from: 0,
            to: 1,
            subpop: 0,
            rate: 5.0,
        });
        let n0 = PopulationState::from_rows(&[vec![10.0], vec![0.0]]).unwrap();
        let cfg = PdmmConfig {
            rates,
            n0,
            t_end: 1.0,
            ode_dt: 0.5,
            record_every: None,
            stop_on: None,
        };
        let err = simulate_pdmm(&cfg, &mut [], &mut RngStream::new(0, 0).rng()).unwrap_err();
        assert!(matches!(err, Error::NegativeComponent { .. }));
    }
}
