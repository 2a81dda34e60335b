//! Stochastic metapopulation model: an exact Gillespie (direct method)
//! sampler of the jump process on population-count matrices.
//!
//! Channel rates are recomputed from scratch after every event. Channel
//! counts are `O(m^2 n_s + m n_s^2)`, so this stays cheap for the small
//! partitions used here; a dependency graph would be the next step for
//! large `m`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::domain::PopulationState;
use crate::error::{Error, Result};
use crate::projection::ProjectedModel;
use crate::rates::{ContactTerm, CrossoverTerm, MassActionRates};

/// What a channel does to the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelKind {
    /// One agent of `status` moves from subpopulation `from` to `to`.
    SpatialJump { status: usize, from: usize, to: usize },
    /// One agent in `subpop` changes status `from -> to`.
    Adoption { from: usize, to: usize, subpop: usize },
}

impl ChannelKind {
    /// The compartment that loses an agent.
    pub fn source(&self) -> (usize, usize) {
        match *self {
            Self::SpatialJump { status, from, .. } => (status, from),
            Self::Adoption { from, subpop, .. } => (from, subpop),
        }
    }

    /// The compartment that gains an agent.
    pub fn target(&self) -> (usize, usize) {
        match *self {
            Self::SpatialJump { status, to, .. } => (status, to),
            Self::Adoption { to, subpop, .. } => (to, subpop),
        }
    }

    /// Columns of the event-log CSV: `kind,i,j,k,l`.
    pub fn csv_fields(&self) -> (&'static str, usize, usize, usize, usize) {
        match *self {
            Self::SpatialJump { status, from, to } => ("jump", status, status, from, to),
            Self::Adoption { from, to, subpop } => ("adoption", from, to, subpop, subpop),
        }
    }
}

pub type RateFn = Arc<dyn Fn(&PopulationState<u32>) -> f64 + Send + Sync>;

/// Propensity of a channel as a function of the current counts.
#[derive(Clone)]
pub enum RateLaw {
    /// `rate * N_status^(subpop)`.
    Linear {
        rate: f64,
        status: usize,
        subpop: usize,
    },
    Contact(ContactTerm),
    Crossover(CrossoverTerm),
    /// State-independent rate (still zero when the source is empty).
    Constant(f64),
    Custom(RateFn),
}

impl fmt::Debug for RateLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { rate, status, subpop } => write!(f, "Linear({rate} * N[{status}][{subpop}])"),
            Self::Contact(t) => write!(f, "{t:?}"),
            Self::Crossover(t) => write!(f, "{t:?}"),
            Self::Constant(r) => write!(f, "Constant({r})"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl RateLaw {
    pub fn eval(&self, n: &PopulationState<u32>) -> f64 {
        match self {
            Self::Linear { rate, status, subpop } => rate * f64::from(n.get(*status, *subpop)),
            Self::Contact(t) => t.propensity(n),
            Self::Crossover(t) => t.propensity(n),
            Self::Constant(r) => *r,
            Self::Custom(f) => f(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JumpChannel {
    pub kind: ChannelKind,
    pub law: RateLaw,
}

impl JumpChannel {
    pub fn new(kind: ChannelKind, law: RateLaw) -> Self {
        Self { kind, law }
    }

    /// Propensity in state `n`; zero whenever the source compartment is empty.
    #[inline]
    pub fn rate(&self, n: &PopulationState<u32>) -> f64 {
        let (s, k) = self.kind.source();
        if n.get(s, k) == 0 {
            0.0
        } else {
            self.law.eval(n)
        }
    }

    /// Applies the ±1 state change.
    pub fn apply(&self, n: &mut PopulationState<u32>) {
        let (s, k) = self.kind.source();
        let (t, l) = self.kind.target();
        n.set(s, k, n.get(s, k) - 1);
        n.set(t, l, n.get(t, l) + 1);
    }
}

/// Jump channels from a compiled rate table.
pub fn channels_from_rates(rates: &MassActionRates) -> Vec<JumpChannel> {
    let mut out = Vec::new();
    for j in &rates.jumps {
        out.push(JumpChannel::new(
            ChannelKind::SpatialJump {
                status: j.status,
                from: j.from,
                to: j.to,
            },
            RateLaw::Linear {
                rate: j.rate,
                status: j.status,
                subpop: j.from,
            },
        ));
    }
    for t in &rates.first_order {
        out.push(JumpChannel::new(
            ChannelKind::Adoption {
                from: t.from,
                to: t.to,
                subpop: t.subpop,
            },
            RateLaw::Linear {
                rate: t.rate,
                status: t.from,
                subpop: t.subpop,
            },
        ));
    }
    for t in &rates.contact {
        out.push(JumpChannel::new(
            ChannelKind::Adoption {
                from: t.from,
                to: t.to,
                subpop: t.subpop,
            },
            RateLaw::Contact(*t),
        ));
    }
    for t in &rates.crossover {
        out.push(JumpChannel::new(
            ChannelKind::Adoption {
                from: t.from,
                to: t.to,
                subpop: t.subpop,
            },
            RateLaw::Crossover(t.clone()),
        ));
    }
    out
}

/// Spatial, first-order, second-order and (if enabled) cross-over channels
/// of a projected model. Channels with a zero rate constant are omitted.
pub fn channels_from_model(model: &ProjectedModel) -> Vec<JumpChannel> {
    channels_from_rates(&MassActionRates::from_model(model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmmEvent {
    pub time: f64,
    pub channel: usize,
}

/// Event log of one SSA run. The piecewise-constant state path is
/// reconstructed from `initial` and the log.
#[derive(Debug, Clone)]
pub struct SmmTrajectory {
    pub initial: PopulationState<u32>,
    pub kinds: Vec<ChannelKind>,
    pub events: Vec<SmmEvent>,
    pub final_state: PopulationState<u32>,
    pub end_time: f64,
}

impl SmmTrajectory {
    /// States after each event, starting with the initial state.
    pub fn path(&self) -> Vec<PopulationState<u32>> {
        let mut n = self.initial.clone();
        let mut out = Vec::with_capacity(self.events.len() + 1);
        out.push(n.clone());
        for e in &self.events {
            apply_kind(&self.kinds[e.channel], &mut n);
            n.time = e.time;
            out.push(n.clone());
        }
        out
    }

    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> PopulationState<u32> {
        let mut n = self.initial.clone();
        for e in self.events.iter().take_while(|e| e.time <= t) {
            apply_kind(&self.kinds[e.channel], &mut n);
        }
        n.time = t;
        n
    }

    /// States sampled on `times` (ascending) with piecewise-constant hold.
    pub fn sample_on(&self, times: &[f64]) -> Vec<PopulationState<u32>> {
        let mut n = self.initial.clone();
        let mut next = 0;
        times
            .iter()
            .map(|&t| {
                while next < self.events.len() && self.events[next].time <= t {
                    apply_kind(&self.kinds[self.events[next].channel], &mut n);
                    next += 1;
                }
                let mut s = n.clone();
                s.time = t;
                s
            })
            .collect()
    }
}

fn apply_kind(kind: &ChannelKind, n: &mut PopulationState<u32>) {
    let (s, k) = kind.source();
    let (t, l) = kind.target();
    n.set(s, k, n.get(s, k) - 1);
    n.set(t, l, n.get(t, l) + 1);
}

/// Optional early exit and logging control for [`simulate_ssa_with`].
#[derive(Debug, Clone, Default)]
pub struct SsaOptions {
    /// Stop right after the first firing of this channel kind.
    pub stop_on: Option<ChannelKind>,
    /// Keep only events of this kind in the log (the state still evolves
    /// through every event); useful for long runs where only one observable
    /// matters.
    pub log_only: Option<ChannelKind>,
}

/// Gillespie direct method from `n0` until `t_end` or absorption.
pub fn simulate_ssa<R: Rng + ?Sized>(
    channels: &[JumpChannel],
    n0: &PopulationState<u32>,
    t_end: f64,
    rng: &mut R,
) -> Result<SmmTrajectory> {
    simulate_ssa_with(channels, n0, t_end, &SsaOptions::default(), rng)
}

pub fn simulate_ssa_with<R: Rng + ?Sized>(
    channels: &[JumpChannel],
    n0: &PopulationState<u32>,
    t_end: f64,
    options: &SsaOptions,
    rng: &mut R,
) -> Result<SmmTrajectory> {
    if !(t_end >= 0.0) {
        return Err(Error::Config(format!("t_end = {t_end} must be >= 0")));
    }
    for ch in channels {
        for (s, k) in [ch.kind.source(), ch.kind.target()] {
            if s >= n0.n_status() || k >= n0.n_subpop() {
                return Err(Error::Config(format!("channel {:?} does not fit the state shape", ch.kind)));
            }
        }
    }
    let mut n = n0.clone();
    n.time = 0.0;
    let initial = n.clone();
    let mut events = Vec::new();
    let mut rates = vec![0.0; channels.len()];
    let mut t = 0.0;
    let mut stopped = false;
    loop {
        let mut total = 0.0;
        for (idx, ch) in channels.iter().enumerate() {
            let r = ch.rate(&n);
            if !(r >= 0.0) {
                return Err(Error::NegativeRate { channel: idx, rate: r });
            }
            rates[idx] = r;
            total += r;
        }
        if total <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        let next = t + wait / total;
        if next > t_end {
            break;
        }
        t = next;
        let mut target = rng.random::<f64>() * total;
        let mut chosen = None;
        for (idx, &r) in rates.iter().enumerate() {
            if r > 0.0 {
                chosen = Some(idx);
                if target < r {
                    break;
                }
                target -= r;
            }
        }
        let idx = chosen.expect("positive total implies a channel");
        channels[idx].apply(&mut n);
        let kind = channels[idx].kind;
        if options.log_only.is_none_or(|k| k == kind) {
            events.push(SmmEvent { time: t, channel: idx });
        }
        if options.stop_on == Some(kind) {
            stopped = true;
            break;
        }
    }
    let end_time = if stopped { t } else { t_end };
    n.time = end_time;
    Ok(SmmTrajectory {
        initial,
        kinds: channels.iter().map(|c| c.kind).collect(),
        events,
        final_state: n,
        end_time,
    })
}

/// Time of the first `status` jump `from -> to`, if any.
pub fn critical_transition_time_smm(traj: &SmmTrajectory, status: usize, from: usize, to: usize) -> Option<f64> {
    let watched = ChannelKind::SpatialJump { status, from, to };
    traj.events.iter().find(|e| traj.kinds[e.channel] == watched).map(|e| e.time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{RngStream, StatusSpace};
    use crate::projection::ContactRate;

    fn two_by_two(crossover: bool) -> ProjectedModel {
        let mut m = ProjectedModel::empty(StatusSpace::numbered(2).unwrap(), 2);
        m.lambda = vec![vec![vec![0.0, 0.05], vec![0.05, 0.0]]; 2];
        m.b = vec![vec![0.02, 0.001], vec![0.001, 0.02]];
        m.contact.push(ContactRate {
            from: 0,
            to: 1,
            via: 1,
            c: Some(0.1),
            gamma_hat: vec![0.002, 0.002],
        });
        m.include_crossover = crossover;
        m
    }

    #[test]
    fn channel_counts_by_enumeration() {
        let ch = channels_from_model(&two_by_two(false));
        let jumps = ch.iter().filter(|c| matches!(c.kind, ChannelKind::SpatialJump { .. })).count();
        assert_eq!((jumps, ch.len() - jumps), (4, 2));
        assert_eq!(channels_from_model(&two_by_two(true)).len(), 8);
        assert!(channels_from_model(&ProjectedModel::empty(StatusSpace::numbered(2).unwrap(), 2)).is_empty());
    }

    #[test]
    fn empty_source_gives_zero_rate() {
        let ch = JumpChannel::new(ChannelKind::SpatialJump { status: 1, from: 0, to: 1 }, RateLaw::Constant(2.0));
        let n = PopulationState::from_rows(&[vec![5u32, 0], vec![0, 3]]).unwrap();
        assert_eq!(ch.rate(&n), 0.0);
    }

    #[test]
    fn conservation_and_reconstruction() {
        let ch = channels_from_model(&two_by_two(true));
        let n0 = PopulationState::from_rows(&[vec![49u32, 50], vec![1, 0]]).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        let traj = simulate_ssa(&ch, &n0, 200.0, &mut rng).unwrap();
        assert!(!traj.events.is_empty());
        let path = traj.path();
        assert!(path.iter().all(|s| s.total() == 100.0));
        assert_eq!(path.last().unwrap().as_slice(), traj.final_state.as_slice());
        assert!(traj.events.windows(2).all(|w| w[0].time <= w[1].time));
        let mid = traj.events[traj.events.len() / 2].time;
        let sampled = traj.sample_on(&[mid]);
        assert_eq!(sampled[0].as_slice(), traj.state_at(mid).as_slice());
    }

    #[test]
    fn absorbing_state_ends_early() {
        let ch = vec![JumpChannel::new(
            ChannelKind::Adoption { from: 0, to: 1, subpop: 0 },
            RateLaw::Linear {
                rate: 1.0,
                status: 0,
                subpop: 0,
            },
        )];
        let n0 = PopulationState::from_rows(&[vec![3u32], vec![0]]).unwrap();
        let traj = simulate_ssa(&ch, &n0, 1e6, &mut RngStream::new(0, 0).rng()).unwrap();
        assert_eq!(traj.events.len(), 3);
        assert_eq!(traj.final_state.get(1, 0), 3);
    }

    #[test]
    fn negative_rate_aborts() {
        let ch = vec![JumpChannel::new(
            ChannelKind::Adoption { from: 0, to: 1, subpop: 0 },
            RateLaw::Custom(Arc::new(|_| -1.0)),
        )];
        let n0 = PopulationState::from_rows(&[vec![3u32], vec![0]]).unwrap();
        let err = simulate_ssa(&ch, &n0, 1.0, &mut RngStream::new(0, 0).rng()).unwrap_err();
        assert!(matches!(err, Error::NegativeRate { channel: 0, .. }));
    }

    #[test]
    fn critical_time_cases() {
        let mut model = two_by_two(false);
        model.lambda[1][0][1] = 0.0;
        let ch = channels_from_model(&model);
        let n0 = PopulationState::from_rows(&[vec![49u32, 50], vec![1, 0]]).unwrap();
        let traj = simulate_ssa(&ch, &n0, 100.0, &mut RngStream::new(5, 0).rng()).unwrap();
        assert_eq!(critical_transition_time_smm(&traj, 1, 0, 1), None);

        let ch = channels_from_model(&two_by_two(false));
        let opts = SsaOptions {
            stop_on: Some(ChannelKind::SpatialJump { status: 1, from: 0, to: 1 }),
            log_only: None,
        };
        let traj = simulate_ssa_with(&ch, &n0, 1e4, &opts, &mut RngStream::new(5, 0).rng()).unwrap();
        let t = critical_transition_time_smm(&traj, 1, 0, 1).unwrap();
        assert_eq!(t, traj.end_time);
        assert_eq!(traj.final_state.get(1, 1), 1);
    }
}
