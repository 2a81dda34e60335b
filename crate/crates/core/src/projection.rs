//! Reduction from the agent-based description to metapopulation rates.
//!
//! Spatial jump rates come from milestone counting on ABM trajectories,
//! first-order adoption rates from conditional averages over each set, and
//! second-order rates from the contact probabilities `b_kl`, the probability
//! that two agents placed uniformly in `A_k` and `A_l` are within the
//! interaction radius. For core sets the committors are approximated by the
//! core-set indicators, so the transition region is never sampled.

use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abm::{AbmTrajectory, LabelChange};
use crate::domain::{dist2, AdoptionRuleSet, PopulationState, RngStream, SpatialPartition, SpatialRate, StatusSpace};
use crate::error::{Error, Result};

/// Smallest accepted Monte Carlo sample count per estimate.
pub const MIN_SAMPLES: usize = 10_000;
pub const DEFAULT_SAMPLES: usize = 1_000_000;

/// Second-order adoption `from -> to` through contacts with `via`, with the
/// raw ABM constant `c` (absent when the model was given macroscopically)
/// and the projected per-subpopulation rate constants `gamma_hat[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactRate {
    pub from: usize,
    pub to: usize,
    pub via: usize,
    #[serde(default)]
    pub c: Option<f64>,
    pub gamma_hat: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaProvenance {
    pub per_status: bool,
    /// Milestone transitions `[i][k][l]`.
    pub transitions: Vec<Vec<Vec<u64>>>,
    /// Agent-time with status `i` and milestone `k`.
    pub exposure: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<Vec<f64>>>,
    /// `(i, k)` pairs with zero exposure whose rates defaulted to 0.
    pub missing: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub b_stderr: Option<Vec<Vec<f64>>>,
    /// `[i][j][k]`.
    #[serde(default)]
    pub gamma1_stderr: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub lambda: Option<LambdaProvenance>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Parameterisation of the SMM and PDMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectedModel {
    pub statuses: StatusSpace,
    pub m: usize,
    /// Migration rates `lambda[i][k][l]`; diagonal entries are ignored.
    pub lambda: Vec<Vec<Vec<f64>>>,
    /// First-order adoption rates `gamma1[i][j][k]`.
    pub gamma1: Vec<Vec<Vec<f64>>>,
    pub contact: Vec<ContactRate>,
    /// Contact probabilities `b[k][l]`.
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub include_crossover: bool,
    #[serde(default)]
    pub provenance: Provenance,
}

fn zeros3(a: usize, b: usize, c: usize) -> Vec<Vec<Vec<f64>>> {
    vec![vec![vec![0.0; c]; b]; a]
}

impl ProjectedModel {
    /// Model with all rates zero and `b` the identity.
    pub fn empty(statuses: StatusSpace, m: usize) -> Self {
        let n_s = statuses.len();
        let b = (0..m).map(|k| (0..m).map(|l| f64::from(u8::from(k == l))).collect()).collect();
        Self {
            statuses,
            m,
            lambda: zeros3(n_s, m, m),
            gamma1: zeros3(n_s, n_s, m),
            contact: Vec::new(),
            b,
            include_crossover: false,
            provenance: Provenance::default(),
        }
    }

    /// Model assembled from macroscopic constants, bypassing estimation.
    /// `b` is the identity, so `gamma_hat = c * b_kk` holds trivially and no
    /// cross-over terms exist.
    pub fn macroscopic(
        statuses: StatusSpace,
        m: usize,
        lambda: Vec<Vec<Vec<f64>>>,
        gamma1: Vec<Vec<Vec<f64>>>,
        contact: Vec<ContactRate>,
    ) -> Result<Self> {
        let mut model = Self::empty(statuses, m);
        model.lambda = lambda;
        model.gamma1 = gamma1;
        model.contact = contact;
        model.provenance.notes.push("macroscopic constants supplied directly".into());
        model.validate()?;
        Ok(model)
    }

    pub fn n_status(&self) -> usize {
        self.statuses.len()
    }

    /// Projected second-order rate constant for `i -> j` in subpopulation `k`,
    /// summed over contact statuses.
    pub fn gamma2_hat(&self, i: usize, j: usize, k: usize) -> f64 {
        self.contact
            .iter()
            .filter(|c| c.from == i && c.to == j)
            .map(|c| c.gamma_hat[k])
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n_s = self.n_status();
        let m = self.m;
        let bad = |what: &str| Err(Error::Config(format!("projected model: {what}")));
        if m == 0 {
            return bad("m must be positive");
        }
        let shape3 = |t: &Vec<Vec<Vec<f64>>>, a: usize, b: usize, c: usize| {
            t.len() == a && t.iter().all(|x| x.len() == b && x.iter().all(|y| y.len() == c))
        };
        if !shape3(&self.lambda, n_s, m, m) {
            return bad("lambda must be n_s x m x m");
        }
        if !shape3(&self.gamma1, n_s, n_s, m) {
            return bad("gamma1 must be n_s x n_s x m");
        }
        if self.b.len() != m || self.b.iter().any(|r| r.len() != m) {
            return bad("b must be m x m");
        }
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !self.lambda.iter().flatten().flatten().all(|&v| nonneg(v)) {
            return bad("lambda entries must be finite and >= 0");
        }
        if !self.gamma1.iter().flatten().flatten().all(|&v| nonneg(v)) {
            return bad("gamma1 entries must be finite and >= 0");
        }
        for i in 0..n_s {
            if self.gamma1[i][i].iter().any(|&v| v != 0.0) {
                return bad("gamma1[i][i] must vanish");
            }
        }
        if !self.b.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)) {
            return bad("b entries must lie in [0, 1]");
        }
        for c in &self.contact {
            if c.from >= n_s || c.to >= n_s || c.via >= n_s {
                return bad("contact status index out of range");
            }
            if c.from == c.to {
                return bad("contact adoption must change status");
            }
            if c.gamma_hat.len() != m || !c.gamma_hat.iter().all(|&v| nonneg(v)) {
                return bad("contact gamma_hat must have m finite entries >= 0");
            }
            if c.c.is_some_and(|v| !nonneg(v)) {
                return bad("contact constant c must be finite and >= 0");
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

/// Monte Carlo estimate of the contact probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BklEstimate {
    pub b: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub n_samples: usize,
}

fn check_samples(n_samples: usize) -> Result<()> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::Config(format!("n_samples = {n_samples} is below the minimum {MIN_SAMPLES}")));
    }
    Ok(())
}

/// `b_kl = P(|x1 - x2| <= r | x1 in A_k, x2 in A_l)` for uniform positions in
/// the sets (restricted to the sampling box). Every ordered pair `(k, l)` is
/// sampled independently on its own sub-stream.
pub fn estimate_bkl(partition: &SpatialPartition, radius: f64, n_samples: usize, stream: RngStream) -> Result<BklEstimate> {
    check_samples(n_samples)?;
    if !(radius > 0.0) {
        return Err(Error::Config(format!("interaction radius {radius} must be > 0")));
    }
    let m = partition.len();
    for k in 0..m {
        if partition.volume(k) <= 0.0 {
            return Err(Error::EmptySet { set: k });
        }
    }
    let r2 = radius * radius;
    let hits: Vec<u64> = (0..m * m)
        .into_par_iter()
        .map(|pair| {
            let (k, l) = (pair / m, pair % m);
            let mut rng = stream.child(pair as u64).rng();
            let mut hits = 0u64;
            for _ in 0..n_samples {
                let a = partition.sample_uniform(k, &mut rng);
                let b = partition.sample_uniform(l, &mut rng);
                hits += u64::from(dist2(a, b) <= r2);
            }
            hits
        })
        .collect();
    let n = n_samples as f64;
    let mut b = vec![vec![0.0; m]; m];
    let mut stderr = vec![vec![0.0; m]; m];
    for k in 0..m {
        for l in 0..m {
            let p = hits[k * m + l] as f64 / n;
            b[k][l] = p;
            stderr[k][l] = (p * (1.0 - p) / n).sqrt();
        }
    }
    Ok(BklEstimate { b, stderr, n_samples })
}

/// Conditional mean of a first-order rate over each set.
#[derive(Debug, Clone, PartialEq)]
pub struct Gamma1Estimate {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
}

/// `gamma^(k) = E[gamma(x) | x in A_k]` for `x` uniform in `A_k`.
pub fn estimate_gamma1(partition: &SpatialPartition, rate: &SpatialRate, n_samples: usize, stream: RngStream) -> Result<Gamma1Estimate> {
    check_samples(n_samples)?;
    let m = partition.len();
    if let Some(c) = rate.as_constant() {
        return Ok(Gamma1Estimate {
            mean: vec![c; m],
            stderr: vec![0.0; m],
            n_samples,
        });
    }
    let stats: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream.child(k as u64).rng();
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n_samples {
                let v = rate.eval(partition.sample_uniform(k, &mut rng));
                s += v;
                s2 += v * v;
            }
            let n = n_samples as f64;
            let mean = s / n;
            let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
            (mean, (var / n).sqrt())
        })
        .collect();
    Ok(Gamma1Estimate {
        mean: stats.iter().map(|s| s.0).collect(),
        stderr: stats.iter().map(|s| s.1).collect(),
        n_samples,
    })
}

/// Maximum-likelihood migration rates from milestone counting.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEstimate {
    /// `rates[i][k][l]`; `None` where status `i` never held milestone `k`.
    pub rates: Vec<Vec<Vec<Option<f64>>>>,
    pub stderr: Vec<Vec<Vec<f64>>>,
    pub transitions: Vec<Vec<Vec<u64>>>,
    pub exposure: Vec<Vec<f64>>,
    pub per_status: bool,
}

impl LambdaEstimate {
    /// Dense rate tensor with missing entries set to zero (logged).
    pub fn to_dense(&self) -> Vec<Vec<Vec<f64>>> {
        let mut missing = 0;
        let dense = self
            .rates
            .iter()
            .map(|rk| {
                rk.iter()
                    .map(|rl| {
                        rl.iter()
                            .map(|r| {
                                r.unwrap_or_else(|| {
                                    missing += 1;
                                    0.0
                                })
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        if missing > 0 {
            warn!("{missing} migration rates had no occupation time and default to 0");
        }
        dense
    }

    pub fn missing(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, rk) in self.rates.iter().enumerate() {
            for (k, rl) in rk.iter().enumerate() {
                if rl.iter().enumerate().any(|(l, r)| l != k && r.is_none()) {
                    out.push((i, k));
                }
            }
        }
        out
    }

    pub fn provenance(&self) -> LambdaProvenance {
        LambdaProvenance {
            per_status: self.per_status,
            transitions: self.transitions.clone(),
            exposure: self.exposure.clone(),
            stderr: self.stderr.clone(),
            missing: self.missing(),
        }
    }
}

/// Accumulates milestone transitions and occupation times over any number
/// of trajectories.
#[derive(Debug, Clone)]
pub struct MilestoneCounter {
    n_status: usize,
    n_sets: usize,
    transitions: Vec<Vec<Vec<u64>>>,
    exposure: Vec<Vec<f64>>,
}

impl MilestoneCounter {
    pub fn new(n_status: usize, n_sets: usize) -> Self {
        Self {
            n_status,
            n_sets,
            transitions: vec![vec![vec![0; n_sets]; n_sets]; n_status],
            exposure: vec![vec![0.0; n_sets]; n_status],
        }
    }

    pub fn add(&mut self, traj: &AbmTrajectory) -> Result<()> {
        if traj.n_sets != self.n_sets || traj.n_status != self.n_status {
            return Err(Error::Config(format!(
                "trajectory has {} statuses / {} sets, counter expects {} / {}",
                traj.n_status, traj.n_sets, self.n_status, self.n_sets
            )));
        }
        let mut status = traj.initial.statuses.clone();
        let mut milestone = traj.initial_milestones.clone();
        let mut since = vec![0.0; status.len()];
        for change in traj.label_changes() {
            let (agent, time) = match change {
                LabelChange::Status { agent, time, .. } | LabelChange::Milestone { agent, time, .. } => (agent, time),
            };
            if let Some(k) = milestone[agent] {
                self.exposure[status[agent]][k] += time - since[agent];
            }
            since[agent] = time;
            match change {
                LabelChange::Status { to, .. } => status[agent] = to,
                LabelChange::Milestone { to, .. } => {
                    if let Some(k) = milestone[agent] {
                        self.transitions[status[agent]][k][to] += 1;
                    }
                    milestone[agent] = Some(to);
                }
            }
        }
        for agent in 0..status.len() {
            if let Some(k) = milestone[agent] {
                self.exposure[status[agent]][k] += traj.end_time - since[agent];
            }
        }
        Ok(())
    }

    /// Rates `transitions / exposure`; with `per_status == false` all
    /// statuses are pooled and the pooled rate is copied to every status.
    pub fn estimate(&self, per_status: bool) -> LambdaEstimate {
        let (n_s, m) = (self.n_status, self.n_sets);
        let mut transitions = self.transitions.clone();
        let mut exposure = self.exposure.clone();
        if !per_status {
            for k in 0..m {
                let total: f64 = (0..n_s).map(|i| self.exposure[i][k]).sum();
                for l in 0..m {
                    let count: u64 = (0..n_s).map(|i| self.transitions[i][k][l]).sum();
                    for i in 0..n_s {
                        transitions[i][k][l] = count;
                    }
                }
                for i in 0..n_s {
                    exposure[i][k] = total;
                }
            }
        }
        let mut rates = vec![vec![vec![None; m]; m]; n_s];
        let mut stderr = vec![vec![vec![0.0; m]; m]; n_s];
        for i in 0..n_s {
            for k in 0..m {
                for l in 0..m {
                    if k == l {
                        rates[i][k][l] = Some(0.0);
                        continue;
                    }
                    if exposure[i][k] > 0.0 {
                        let count = transitions[i][k][l] as f64;
                        rates[i][k][l] = Some(count / exposure[i][k]);
                        stderr[i][k][l] = count.sqrt() / exposure[i][k];
                    }
                }
            }
        }
        LambdaEstimate {
            rates,
            stderr,
            transitions,
            exposure,
            per_status,
        }
    }
}

/// Milestone-counting rate estimate from a single trajectory.
pub fn estimate_lambda_from_trajectory(traj: &AbmTrajectory, per_status: bool) -> Result<LambdaEstimate> {
    let mut counter = MilestoneCounter::new(traj.n_status, traj.n_sets);
    counter.add(traj)?;
    Ok(counter.estimate(per_status))
}

/// Cross-over propensities `eps[i][j][k] = c_ij sum_{l != k} b_kl N_i^(k) N_via^(l)`.
pub fn crossover_epsilon(model: &ProjectedModel, n: &PopulationState<f64>) -> Vec<Vec<Vec<f64>>> {
    let n_s = model.n_status();
    let m = model.m;
    let mut eps = zeros3(n_s, n_s, m);
    for c in &model.contact {
        let Some(rate) = c.c else { continue };
        for k in 0..m {
            let partners: f64 = (0..m).filter(|&l| l != k).map(|l| model.b[k][l] * n.get(c.via, l)).sum();
            eps[c.from][c.to][k] += rate * n.get(c.from, k) * partners;
        }
    }
    eps
}

/// Where migration rates come from when assembling a model.
#[derive(Debug, Clone)]
pub enum LambdaSource<'a> {
    Supplied(Vec<Vec<Vec<f64>>>),
    Estimated(&'a LambdaEstimate),
}

/// Assembles a [`ProjectedModel`] from geometry, ABM rules and migration
/// rates: first-order rates by conditional averaging, contact rates as
/// `gamma_hat = c * b_kk`.
pub fn build_projected_model(
    partition: &SpatialPartition,
    statuses: StatusSpace,
    rules: &AdoptionRuleSet,
    lambda: LambdaSource<'_>,
    n_samples: usize,
    stream: RngStream,
) -> Result<ProjectedModel> {
    let n_s = statuses.len();
    let m = partition.len();
    rules.validate(n_s)?;
    let mut model = ProjectedModel::empty(statuses, m);
    model.provenance.seed = Some(stream.seed);
    model.provenance.n_samples = Some(n_samples);

    match lambda {
        LambdaSource::Supplied(l) => {
            model.lambda = l;
            model.provenance.notes.push("migration rates supplied".into());
        }
        LambdaSource::Estimated(est) => {
            model.lambda = est.to_dense();
            model.provenance.lambda = Some(est.provenance());
        }
    }

    let mut gamma1_stderr = zeros3(n_s, n_s, m);
    for (idx, r) in rules.first_order.iter().enumerate() {
        let est = estimate_gamma1(partition, &r.rate, n_samples, stream.child(1_000 + idx as u64))?;
        for k in 0..m {
            model.gamma1[r.from][r.to][k] += est.mean[k];
            gamma1_stderr[r.from][r.to][k] = gamma1_stderr[r.from][r.to][k].hypot(est.stderr[k]);
        }
    }
    model.provenance.gamma1_stderr = Some(gamma1_stderr);

    if let Some(radius) = rules.second_order.first().map(|r| r.radius) {
        if rules.second_order.iter().any(|r| r.radius != radius) {
            return Err(Error::Config("projection requires one shared interaction radius".into()));
        }
        let b = estimate_bkl(partition, radius, n_samples, stream.child(0))?;
        model.b = b.b;
        model.provenance.b_stderr = Some(b.stderr);
        model.provenance.radius = Some(radius);
        for r in &rules.second_order {
            model.contact.push(ContactRate {
                from: r.from,
                to: r.to,
                via: r.via,
                c: Some(r.rate),
                gamma_hat: (0..m).map(|k| r.rate * model.b[k][k]).collect(),
            });
        }
        let gap = partition.kind() == crate::domain::PartitionKind::CoreSets;
        if gap {
            model
                .provenance
                .notes
                .push("core-set indicators stand in for committors; transition region excluded from b".into());
        }
    }
    model.validate()?;
    Ok(model)
}

/// Draws `n_samples` uniform points in set `k`; exposed for diagnostics.
pub fn sample_set<R: Rng + ?Sized>(partition: &SpatialPartition, k: usize, n_samples: usize, rng: &mut R) -> Vec<[f64; 2]> {
    (0..n_samples).map(|_| partition.sample_uniform(k, rng)).collect()
}
