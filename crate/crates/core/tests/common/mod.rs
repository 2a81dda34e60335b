//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::DMatrix;
use popsim::abm::AdoptionChannel;
use popsim::domain::SpatialRate;
use popsim::projection::{ContactRate, ProjectedModel};
use popsim::{AdoptionRuleSet, FirstOrderRule, PopulationState, SecondOrderRule, StatusSpace, SystemState};
use rand::Rng;

/// Doi contact `from -> to` through `to`, with constant `c`, per-subpop
/// `gamma_hat` and optional cross-over couplings `b[k][l]`.
#[derive(Debug, Clone)]
pub struct TinyContact {
    pub from: usize,
    pub to: usize,
    pub c: f64,
    pub gamma_hat: Vec<f64>,
}

/// A small metapopulation model written out rate by rate.
#[derive(Debug, Clone)]
pub struct TinyModel {
    pub n_s: usize,
    pub m: usize,
    pub lambda: Vec<Vec<Vec<f64>>>,
    pub gamma1: Vec<Vec<Vec<f64>>>,
    pub contact: Vec<TinyContact>,
    pub b: Vec<Vec<f64>>,
    pub crossover: bool,
}

impl TinyModel {
    /// Two statuses, two subpopulations: both statuses migrate, status 2
    /// reverts spontaneously, status 1 adopts 2 on contact (with cross-over).
    pub fn reference() -> Self {
        Self {
            n_s: 2,
            m: 2,
            lambda: vec![vec![vec![0.0, 0.7], vec![0.4, 0.0]], vec![vec![0.0, 0.3], vec![0.9, 0.0]]],
            gamma1: vec![vec![vec![0.0; 2]; 2], vec![vec![0.25, 0.5], vec![0.0; 2]]],
            contact: vec![TinyContact {
                from: 0,
                to: 1,
                c: 2.0,
                gamma_hat: vec![0.8, 1.2],
            }],
            b: vec![vec![0.4, 0.15], vec![0.15, 0.6]],
            crossover: true,
        }
    }

    pub fn to_projected(&self) -> ProjectedModel {
        let mut model = ProjectedModel::empty(StatusSpace::numbered(self.n_s).unwrap(), self.m);
        model.lambda = self.lambda.clone();
        model.gamma1 = self.gamma1.clone();
        model.contact = self
            .contact
            .iter()
            .map(|c| ContactRate {
                from: c.from,
                to: c.to,
                via: c.to,
                c: Some(c.c),
                gamma_hat: c.gamma_hat.clone(),
            })
            .collect();
        model.b = self.b.clone();
        model.include_crossover = self.crossover;
        model.validate().unwrap();
        model
    }

    /// Outgoing transitions `(target, rate)` of state `n` (`n[i * m + k]`).
    pub fn transitions(&self, n: &[u32]) -> Vec<(Vec<u32>, f64)> {
        let m = self.m;
        let idx = |i: usize, k: usize| i * m + k;
        let moved = |from: usize, to: usize| {
            let mut t = n.to_vec();
            t[from] -= 1;
            t[to] += 1;
            t
        };
        let mut out = Vec::new();
        for i in 0..self.n_s {
            for k in 0..m {
                let nik = f64::from(n[idx(i, k)]);
                if nik == 0.0 {
                    continue;
                }
                for l in 0..m {
                    if l != k && self.lambda[i][k][l] > 0.0 {
                        out.push((moved(idx(i, k), idx(i, l)), self.lambda[i][k][l] * nik));
                    }
                }
                for j in 0..self.n_s {
                    if j != i && self.gamma1[i][j][k] > 0.0 {
                        out.push((moved(idx(i, k), idx(j, k)), self.gamma1[i][j][k] * nik));
                    }
                }
            }
        }
        for c in &self.contact {
            for k in 0..m {
                let ni = f64::from(n[idx(c.from, k)]);
                if ni == 0.0 {
                    continue;
                }
                let mut rate = c.gamma_hat[k] * ni * f64::from(n[idx(c.to, k)]);
                if self.crossover {
                    for l in (0..m).filter(|&l| l != k) {
                        rate += c.c * self.b[k][l] * ni * f64::from(n[idx(c.to, l)]);
                    }
                }
                if rate > 0.0 {
                    out.push((moved(idx(c.from, k), idx(c.to, k)), rate));
                }
            }
        }
        out
    }
}

/// All `cells`-vectors of nonnegative integers summing to `total`.
pub fn compositions(total: u32, cells: usize) -> Vec<Vec<u32>> {
    if cells == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, cells - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Master-equation generator of a [`TinyModel`] on all states with
/// `n_agents` agents.
pub struct Generator {
    pub states: Vec<Vec<u32>>,
    pub index: HashMap<Vec<u32>, usize>,
    pub q: DMatrix<f64>,
}

impl Generator {
    pub fn build(model: &TinyModel, n_agents: u32) -> Self {
        let states = compositions(n_agents, model.n_s * model.m);
        let index: HashMap<Vec<u32>, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let n = states.len();
        let mut q = DMatrix::zeros(n, n);
        for (a, s) in states.iter().enumerate() {
            for (target, rate) in model.transitions(s) {
                q[(a, index[&target])] += rate;
            }
            let out: f64 = (0..n).filter(|&b| b != a).map(|b| q[(a, b)]).sum();
            q[(a, a)] = -out;
        }
        Self { states, index, q }
    }

    /// `(off-diagonal sum) + diagonal` per row, which is exactly zero by
    /// construction when the diagonal is formed as the negated sum.
    pub fn row_sums(&self) -> Vec<f64> {
        let n = self.states.len();
        (0..n)
            .map(|a| {
                let off: f64 = (0..n).filter(|&b| b != a).map(|b| self.q[(a, b)]).sum();
                off + self.q[(a, a)]
            })
            .collect()
    }

    /// Distribution at time `t` from the point mass on `start`.
    pub fn marginal(&self, start: &[u32], t: f64) -> Vec<f64> {
        let p = (&self.q * t).exp();
        let a = self.index[start];
        (0..self.states.len()).map(|b| p[(a, b)].max(0.0)).collect()
    }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Flattens a count matrix into the `[i * m + k]` layout used above.
pub fn flatten(n: &PopulationState<u32>) -> Vec<u32> {
    n.as_slice().to_vec()
}

/// Closed-form ratio `<Phi_M, Phi_M> / <Phi_N, Phi_N>` for
/// `M = N + E_j^(k) - E_i^(k)`.
pub fn swap_ratio(n: &PopulationState<f64>, i: usize, j: usize, k: usize) -> f64 {
    n.get(i, k) / (n.get(j, k) + 1.0)
}

/// Positive-rate adoption channels by a full pair scan, in (agent, rule)
/// order.
pub fn brute_force_channels(state: &SystemState, rules: &AdoptionRuleSet) -> Vec<AdoptionChannel> {
    let mut out = Vec::new();
    for (a, (&s, &x)) in state.statuses.iter().zip(&state.positions).enumerate() {
        for r in &rules.first_order {
            if r.from == s {
                let rate = r.rate.eval(x);
                if rate > 0.0 {
                    out.push(AdoptionChannel {
                        agent: a,
                        from: r.from,
                        to: r.to,
                        rate,
                    });
                }
            }
        }
        for r in &rules.second_order {
            if r.from != s || r.rate <= 0.0 {
                continue;
            }
            let mut count = 0usize;
            for (b, (&sb, &y)) in state.statuses.iter().zip(&state.positions).enumerate() {
                let dx = x[0] - y[0];
                let dy = x[1] - y[1];
                if b != a && sb == r.via && dx * dx + dy * dy <= r.radius * r.radius {
                    count += 1;
                }
            }
            if count > 0 {
                out.push(AdoptionChannel {
                    agent: a,
                    from: r.from,
                    to: r.to,
                    rate: r.rate * count as f64,
                });
            }
        }
    }
    out
}

/// Random agents in `[-2, 2] x [-1, 1]` with up to 200 agents and three
/// statuses, plus a random mix of first- and second-order rules.
pub fn random_abm_state<R: Rng>(rng: &mut R, max_agents: usize) -> (SystemState, AdoptionRuleSet, usize) {
    let n_status = 3;
    let n = rng.random_range(1..=max_agents);
    let positions = (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)]).collect();
    let statuses = (0..n).map(|_| rng.random_range(0..n_status)).collect();
    let state = SystemState::new(positions, statuses, n_status).unwrap();
    (state, random_rules(rng, n_status), n_status)
}

pub fn random_rules<R: Rng>(rng: &mut R, n_status: usize) -> AdoptionRuleSet {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for _ in 0..rng.random_range(0..3) {
        let (from, to) = distinct_pair(rng, n_status);
        first.push(FirstOrderRule {
            from,
            to,
            rate: SpatialRate::constant(rng.random_range(0.01..1.0)),
        });
    }
    for _ in 0..rng.random_range(1..4) {
        let (from, to) = distinct_pair(rng, n_status);
        let via = rng.random_range(0..n_status);
        second.push(SecondOrderRule {
            from,
            to,
            via,
            rate: rng.random_range(0.01..2.0),
            radius: rng.random_range(0.02..0.6),
        });
    }
    AdoptionRuleSet::new(first, second)
}

pub fn distinct_pair<R: Rng>(rng: &mut R, n: usize) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let b = (a + rng.random_range(1..n)) % n;
    (a, b)
}

/// Random macroscopic model with `n_s` statuses and `m` subpopulations.
pub fn random_model<R: Rng>(rng: &mut R, n_s: usize, m: usize) -> ProjectedModel {
    let mut model = ProjectedModel::empty(StatusSpace::numbered(n_s).unwrap(), m);
    for i in 0..n_s {
        for k in 0..m {
            for l in 0..m {
                if k != l && rng.random_bool(0.7) {
                    model.lambda[i][k][l] = rng.random_range(0.0..1.0);
                }
            }
            for j in 0..n_s {
                if i != j && rng.random_bool(0.3) {
                    model.gamma1[i][j][k] = rng.random_range(0.0..0.5);
                }
            }
        }
    }
    for _ in 0..rng.random_range(0..3) {
        let (from, to) = distinct_pair(rng, n_s);
        let c = rng.random_range(0.001..0.05);
        model.contact.push(ContactRate {
            from,
            to,
            via: to,
            c: Some(c),
            gamma_hat: (0..m).map(|_| c * rng.random_range(0.1..1.0)).collect(),
        });
    }
    for k in 0..m {
        for l in 0..m {
            model.b[k][l] = if k == l {
                rng.random_range(0.1..1.0)
            } else {
                rng.random_range(0.0..0.05)
            };
        }
    }
    model.include_crossover = rng.random_bool(0.5);
    model.validate().unwrap();
    model
}

pub fn random_counts<R: Rng>(rng: &mut R, n_s: usize, m: usize, max: u32) -> PopulationState<u32> {
    let rows: Vec<Vec<u32>> = (0..n_s).map(|_| (0..m).map(|_| rng.random_range(0..=max)).collect()).collect();
    PopulationState::from_rows(&rows).unwrap()
}

pub fn exp_cdf(rate: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| if x <= 0.0 { 0.0 } else { 1.0 - (-rate * x).exp() }
}
