//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use popsim::abm::{critical_transition_time_abm, simulate_abm, AbmConfig, CriticalWatch, InitialCondition};
use popsim::epidemics::{run_scenario_replica, ScenarioReplica, ScenarioResults};
use popsim::experiments::{
    benchmark_scaling, critical_time_histogram, ks_distance, ks_two_sample_p_value, run_replicas, CriticalTimeHistogram, ModelKind,
    ReplicaBatch, Workload,
};
use popsim::io;
use popsim::pdmm::{critical_transition_time_pdmm, simulate_pdmm, PdmmConfig};
use popsim::projection::{build_projected_model, LambdaSource, MilestoneCounter, ProjectedModel};
use popsim::smm::{channels_from_model, critical_transition_time_smm, simulate_ssa_with, ChannelKind, SsaOptions};
use popsim::{AdoptionRuleSet, PopulationState, RngStream, StatusSpace};
use serde::Serialize;

use crate::config::{Overrides, Rates, RunConfig};
use crate::Failure;

/// Stream ids above every replica index.
const CALIBRATION_STREAM: u64 = 1 << 48;
const PROJECTION_STREAM: u64 = CALIBRATION_STREAM + 1;
const BENCHMARK_STREAM: u64 = CALIBRATION_STREAM + 2;

#[derive(Debug, Serialize)]
struct Summary {
    model: ModelKind,
    config_hash: String,
    seed: u64,
    n_replicas: usize,
    horizon: f64,
    histogram: CriticalTimeHistogram,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<popsim::epidemics::ScenarioSummary>,
}

/// Result of one replica as kept in memory.
struct ReplicaOutcome {
    critical: Option<f64>,
    final_state: Vec<f64>,
    scenario: Option<ScenarioReplica>,
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(cfg).expect("config serialises");
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("resolved_config.json"), format!("{text}\n"))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}")?;
    Ok(())
}

fn keep_trajectory(cfg: &RunConfig, replica: usize) -> bool {
    cfg.output.trajectories.is_none_or(|n| replica < n)
}

fn replica_path(dir: &Path, replica: usize, name: &str) -> PathBuf {
    dir.join(format!("replica_{replica:04}_{name}.csv"))
}

/// Resolves the macroscopic rates, estimating them if asked to.
pub fn resolve_model(cfg: &RunConfig) -> Result<ProjectedModel, Failure> {
    let rates = cfg
        .rates
        .as_ref()
        .ok_or_else(|| Failure::Schema("rates: required for this model".into()))?;
    let model = match rates {
        Rates::Model { model } => (**model).clone(),
        Rates::File { path } => ProjectedModel::load(path).map_err(|e| Failure::Schema(format!("rates.path: {}: {e}", path.display())))?,
        Rates::Estimate {
            calibration,
            n_samples,
            per_status,
        } => {
            let statuses = cfg.status_space()?;
            let rules = cfg.adoption_rules(&statuses)?;
            let g = cfg.geometry()?;
            let abm = AbmConfig {
                n_status: statuses.len(),
                sigma: g.sigma,
                dt: cfg.run.dt,
                t_end: calibration.t_end,
                potential: g.potential,
                rules: AdoptionRuleSet::default(),
                initial: InitialCondition::Stationary {
                    n_agents: calibration.n_agents,
                    background: 0,
                    seeds: vec![],
                    bounds: *g.partition.sampling_box(),
                },
                milestones: Some(g.partition.clone()),
                snapshot_every: None,
                stop_on: None,
            };
            abm.validate().map_err(|e| Failure::Schema(format!("rates.calibration: {e}")))?;
            info!(
                "calibrating migration rates: {} agents for t = {}",
                calibration.n_agents, calibration.t_end
            );
            let traj = simulate_abm(&abm, &mut RngStream::new(cfg.run.seed, CALIBRATION_STREAM).rng())?;
            let mut counter = MilestoneCounter::new(statuses.len(), g.partition.len());
            counter.add(&traj)?;
            let est = counter.estimate(*per_status);
            for (i, k) in est.missing() {
                warn!(
                    "no exposure for status {} in set {k}; its migration rates default to 0",
                    statuses.label(i)
                );
            }
            build_projected_model(
                &g.partition,
                statuses,
                &rules,
                LambdaSource::Estimated(&est),
                *n_samples,
                RngStream::new(cfg.run.seed, PROJECTION_STREAM),
            )
            .map_err(|e| match e {
                popsim::Error::Config(msg) => Failure::Schema(format!("rates: {msg}")),
                other => other.into(),
            })?
        }
    };
    if let Some(labels) = &cfg.statuses {
        if labels.as_slice() != model.statuses.labels() {
            return Err(Failure::Schema(format!(
                "statuses: {labels:?} do not match the model's {:?}",
                model.statuses.labels()
            )));
        }
    }
    model.validate().map_err(|e| Failure::Schema(format!("rates: {e}")))?;
    Ok(model)
}

/// `(status, from, to)` of the critical watch and whether it stops the run.
type Watch = ((usize, usize, usize), bool);

/// Critical watch resolved against `statuses`, with subpopulation indices
/// checked against `m`.
fn critical_triple(cfg: &RunConfig, statuses: &StatusSpace, m: usize) -> Result<Option<Watch>, Failure> {
    let Some((s, c)) = cfg.critical_status(statuses)? else {
        return Ok(None);
    };
    for (key, v) in [("critical.from", c.from), ("critical.to", c.to)] {
        if v >= m {
            return Err(Failure::Schema(format!("{key}: {v} out of range for {m} subpopulations")));
        }
    }
    if c.from == c.to {
        return Err(Failure::Schema("critical.to: must differ from critical.from".into()));
    }
    Ok(Some(((s, c.from, c.to), c.stop)))
}

pub fn simulate(config_path: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let cfg = RunConfig::load(config_path, overrides)?;
    cfg.check_run()?;
    let dir = cfg.output.directory.clone();
    let (outcomes, horizon) = match cfg.model {
        ModelKind::Abm => run_abm(&cfg, &dir)?,
        ModelKind::Smm => run_smm(&cfg, &dir)?,
        ModelKind::Pdmm => run_pdmm(&cfg, &dir)?,
        ModelKind::Covid => run_covid(&cfg, &dir)?,
    };
    let critical_times: Vec<Option<f64>> = outcomes.iter().map(|o| o.critical).collect();
    let hist = critical_time_histogram(&critical_times, cfg.output.histogram_bins, None)?;
    io::write_histogram(io::create(dir.join("histogram.csv"))?, &hist)?;
    let hash = cfg.hash();
    let batch = ReplicaBatch {
        model: cfg.model,
        config_hash: hash.clone(),
        seed: cfg.run.seed,
        n_replicas: outcomes.len(),
        horizon,
        critical_times,
        final_states: outcomes.iter().map(|o| o.final_state.clone()).collect(),
        mean_path: None,
    };
    io::write_json(dir.join("batch.json"), &batch)?;
    let scenario = match cfg.model {
        ModelKind::Covid => {
            let spec = cfg.scenario()?;
            let replicas: Vec<ScenarioReplica> = outcomes.into_iter().filter_map(|o| o.scenario).collect();
            io::write_scenario_replicas(io::create(dir.join("replicas.csv"))?, spec.params.m, &replicas)?;
            let results = ScenarioResults {
                scenario: spec.which,
                params: spec.params.clone(),
                seed: cfg.run.seed,
                replicas,
            };
            Some(results.summary())
        }
        _ => None,
    };
    let summary = Summary {
        model: cfg.model,
        config_hash: hash,
        seed: cfg.run.seed,
        n_replicas: batch.n_replicas,
        horizon,
        histogram: hist,
        scenario,
    };
    io::write_json(dir.join("summary.json"), &summary)?;
    info!(
        "{} replicas of {}: mean critical time {:?}, no transition in {:.3}",
        summary.n_replicas,
        cfg.model.as_str(),
        summary.histogram.mean,
        summary.histogram.fraction_none
    );
    Ok(())
}

fn run_abm(cfg: &RunConfig, dir: &Path) -> Result<(Vec<ReplicaOutcome>, f64), Failure> {
    let statuses = cfg.status_space()?;
    let abm = cfg.abm_config(&statuses, None, 1.0)?;
    let m = abm.milestones.as_ref().map_or(0, |p| p.len());
    let watch = critical_triple(cfg, &statuses, m)?.map(|((status, from, to), _)| CriticalWatch { status, from, to });
    write_resolved(cfg, dir)?;
    let outcomes = run_replicas(cfg.run.replicas, cfg.run.seed, |r, stream| {
        let traj = simulate_abm(&abm, &mut stream.rng())?;
        if keep_trajectory(cfg, r) {
            io::write_abm_events(io::create(replica_path(dir, r, "events"))?, &traj.events)?;
            io::write_milestones(io::create(replica_path(dir, r, "milestones"))?, &traj.milestones)?;
            if !traj.snapshots.is_empty() {
                io::write_snapshot_counts(io::create(replica_path(dir, r, "counts"))?, &statuses, &traj.snapshots)?;
            }
        }
        let final_state = traj
            .projected_path()
            .last()
            .map(|n| n.to_real().as_slice().to_vec())
            .unwrap_or_default();
        Ok(ReplicaOutcome {
            critical: watch.and_then(|w| critical_transition_time_abm(&traj, &w)),
            final_state,
            scenario: None,
        })
    })?;
    Ok((outcomes, abm.t_end))
}

fn run_smm(cfg: &RunConfig, dir: &Path) -> Result<(Vec<ReplicaOutcome>, f64), Failure> {
    let model = resolve_model(cfg)?;
    let t_end = cfg.t_end()?;
    let n0 = cfg.initial_integer_counts(model.n_status(), model.m)?;
    let crit = critical_triple(cfg, &model.statuses, model.m)?;
    let kind = crit.map(|((status, from, to), _)| ChannelKind::SpatialJump { status, from, to });
    let options = SsaOptions {
        stop_on: crit.filter(|c| c.1).and(kind),
        log_only: None,
    };
    let channels = channels_from_model(&model);
    write_resolved(cfg, dir)?;
    if matches!(cfg.rates, Some(Rates::Estimate { .. })) {
        model.save(dir.join("model.json"))?;
    }
    let outcomes = run_replicas(cfg.run.replicas, cfg.run.seed, |r, stream| {
        let traj = simulate_ssa_with(&channels, &n0, t_end, &options, &mut stream.rng())?;
        if keep_trajectory(cfg, r) {
            io::write_smm_events(io::create(replica_path(dir, r, "events"))?, &traj)?;
            io::write_state_path(io::create(replica_path(dir, r, "path"))?, &traj.path(), "count")?;
        }
        let critical = crit.and_then(|((s, from, to), _)| critical_transition_time_smm(&traj, s, from, to));
        Ok(ReplicaOutcome {
            critical,
            final_state: traj.final_state.to_real().as_slice().to_vec(),
            scenario: None,
        })
    })?;
    Ok((outcomes, t_end))
}

fn run_pdmm(cfg: &RunConfig, dir: &Path) -> Result<(Vec<ReplicaOutcome>, f64), Failure> {
    let model = resolve_model(cfg)?;
    let t_end = cfg.t_end()?;
    let n0 = cfg.initial_counts(model.n_status(), model.m)?;
    let crit = critical_triple(cfg, &model.statuses, model.m)?;
    let mut config = PdmmConfig::from_model(&model, n0, t_end, cfg.run.ode_dt);
    config.stop_on = crit.filter(|c| c.1).map(|c| c.0);
    config.validate()?;
    write_resolved(cfg, dir)?;
    if matches!(cfg.rates, Some(Rates::Estimate { .. })) {
        model.save(dir.join("model.json"))?;
    }
    let outcomes = run_replicas(cfg.run.replicas, cfg.run.seed, |r, stream| {
        let keep = keep_trajectory(cfg, r);
        let mut config = config.clone();
        config.record_every = keep.then_some(cfg.run.record_every.max(1));
        let traj = simulate_pdmm(&config, &mut [], &mut stream.rng())?;
        if keep {
            io::write_state_path(io::create(replica_path(dir, r, "path"))?, &traj.path, "value")?;
            io::write_jumps(io::create(replica_path(dir, r, "jumps"))?, &traj.jumps)?;
        }
        let critical = crit.and_then(|((s, from, to), _)| critical_transition_time_pdmm(&traj, s, from, to));
        Ok(ReplicaOutcome {
            critical,
            final_state: traj.final_state.as_slice().to_vec(),
            scenario: None,
        })
    })?;
    Ok((outcomes, t_end))
}

fn run_covid(cfg: &RunConfig, dir: &Path) -> Result<(Vec<ReplicaOutcome>, f64), Failure> {
    let spec = cfg.scenario()?;
    if cfg.critical.is_some() {
        return Err(Failure::Schema(
            "critical: the covid model watches the first exposed traveller from subpopulation 0 to 1".into(),
        ));
    }
    write_resolved(cfg, dir)?;
    let outcomes = run_replicas(cfg.run.replicas, cfg.run.seed, |r, stream| {
        let keep = keep_trajectory(cfg, r);
        let mut rep = run_scenario_replica(spec.which, &spec.params, stream, r, keep.then_some(cfg.run.record_every.max(1)))?;
        if let Some(traj) = rep.trajectory.take() {
            io::write_state_path(io::create(replica_path(dir, r, "path"))?, &traj.path, "value")?;
            io::write_jumps(io::create(replica_path(dir, r, "jumps"))?, &traj.jumps)?;
            io::write_phases(io::create(replica_path(dir, r, "phases"))?, &traj.phases)?;
        }
        Ok(ReplicaOutcome {
            critical: rep.critical_time,
            final_state: rep.final_state.as_slice().to_vec(),
            scenario: Some(rep),
        })
    })?;
    Ok((outcomes, spec.params.horizon))
}

pub fn project(config_path: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let cfg = RunConfig::load(config_path, overrides)?;
    let model = resolve_model(&cfg)?;
    let dir = &cfg.output.directory;
    std::fs::create_dir_all(dir)?;
    model.save(dir.join("model.json"))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", model.to_json_string()?)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct BatchRow {
    file: PathBuf,
    model: ModelKind,
    n_replicas: usize,
    horizon: f64,
    mean: Option<f64>,
    stderr: Option<f64>,
    median: Option<f64>,
    fraction_none: f64,
}

#[derive(Debug, Serialize)]
struct PairRow {
    a: usize,
    b: usize,
    ks_distance: f64,
    p_value: f64,
}

#[derive(Debug, Serialize)]
struct Comparison {
    range: Option<(f64, f64)>,
    batches: Vec<BatchRow>,
    pairs: Vec<PairRow>,
    histograms: Vec<CriticalTimeHistogram>,
}

pub fn compare(files: &[PathBuf], out: &Path, bins: usize) -> Result<(), Failure> {
    if files.len() < 2 {
        return Err(Failure::Schema("compare: needs at least two batch files".into()));
    }
    if bins == 0 {
        return Err(Failure::Schema("--bins: must be >= 1".into()));
    }
    let mut batches = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(f).map_err(|e| Failure::Schema(format!("{}: {e}", f.display())))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let batch: ReplicaBatch = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Failure::Schema(format!("{}: at `{}`: {}", f.display(), e.path(), e.inner())))?;
        batches.push(batch);
    }
    let horizon = batches[0].horizon;
    if batches.iter().any(|b| b.horizon != horizon) {
        warn!("batches have different horizons; censoring differs between them");
    }
    let observed: Vec<Vec<f64>> = batches
        .iter()
        .map(|b| b.critical_times.iter().flatten().copied().collect())
        .collect();
    let all = observed.iter().flatten().copied();
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    let range = lo.is_finite().then_some((lo, if hi > lo { hi } else { lo + 1.0 }));
    let mut histograms = Vec::new();
    let mut rows = Vec::new();
    for (b, f) in batches.iter().zip(files) {
        let h = critical_time_histogram(&b.critical_times, bins, range)?;
        rows.push(BatchRow {
            file: f.clone(),
            model: b.model,
            n_replicas: b.n_replicas,
            horizon: b.horizon,
            mean: h.mean,
            stderr: h.stderr,
            median: h.median,
            fraction_none: h.fraction_none,
        });
        histograms.push(h);
    }
    let mut pairs = Vec::new();
    for a in 0..batches.len() {
        for b in a + 1..batches.len() {
            if observed[a].is_empty() || observed[b].is_empty() {
                warn!("batch {a} or {b} has no observed critical times; skipping their KS distance");
                continue;
            }
            let d = ks_distance(&observed[a], &observed[b])?;
            pairs.push(PairRow {
                a,
                b,
                ks_distance: d,
                p_value: ks_two_sample_p_value(d, observed[a].len(), observed[b].len()),
            });
        }
    }
    std::fs::create_dir_all(out)?;
    for (i, h) in histograms.iter().enumerate() {
        io::write_histogram(io::create(out.join(format!("histogram_{i}.csv")))?, h)?;
    }
    let cmp = Comparison {
        range,
        batches: rows,
        pairs,
        histograms,
    };
    io::write_json(out.join("comparison.json"), &cmp)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "batch  model  replicas  mean  stderr  median  fraction_none")?;
    for (i, r) in cmp.batches.iter().enumerate() {
        let f = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.4}"));
        writeln!(
            stdout,
            "{i}  {}  {}  {}  {}  {}  {:.4}",
            r.model.as_str(),
            r.n_replicas,
            f(r.mean),
            f(r.stderr),
            f(r.median),
            r.fraction_none
        )?;
    }
    for p in &cmp.pairs {
        writeln!(stdout, "KS({}, {}) = {:.4} (p = {:.3})", p.a, p.b, p.ks_distance, p.p_value)?;
    }
    Ok(())
}

/// Count matrix rescaled to `factor` times its size; nonzero cells stay
/// nonzero.
fn scale_counts(n: &PopulationState<u32>, factor: f64) -> PopulationState<u32> {
    let mut out = n.clone();
    for v in out.as_mut_slice() {
        if *v > 0 {
            *v = ((f64::from(*v) * factor).round() as u32).max(1);
        }
    }
    out
}

/// Model with contact constants multiplied by `factor`.
fn scale_contacts(model: &ProjectedModel, factor: f64) -> ProjectedModel {
    let mut m = model.clone();
    for c in &mut m.contact {
        c.c = c.c.map(|v| v * factor);
        c.gamma_hat.iter_mut().for_each(|g| *g *= factor);
    }
    m
}

pub fn benchmark(config_path: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let cfg = RunConfig::load(config_path, overrides)?;
    cfg.check_run()?;
    let spec = cfg
        .benchmark
        .clone()
        .ok_or_else(|| Failure::Schema("benchmark: required by the benchmark command".into()))?;
    if spec.n_agents.len() < 2 || spec.n_agents.contains(&0) {
        return Err(Failure::Schema("benchmark.n_agents: needs at least two positive sizes".into()));
    }
    let t_end = cfg.t_end()?;
    let seed = cfg.run.seed;
    let stream = |n: usize, r: usize| RngStream::new(seed, BENCHMARK_STREAM).child((n as u64) << 20 ^ r as u64);
    let table = match cfg.model {
        ModelKind::Abm => {
            let statuses = cfg.status_space()?;
            let base = cfg.abm_config(&statuses, None, 1.0)?;
            let n_base = match base.initial {
                InitialCondition::Stationary { n_agents, .. } => n_agents.max(1),
                InitialCondition::Explicit { .. } => unreachable!("config files give stationary initial conditions"),
            };
            let configs: Vec<(usize, AbmConfig)> = spec
                .n_agents
                .iter()
                .map(|&n| {
                    let mut c = cfg.abm_config(&statuses, Some(n), n_base as f64 / n as f64)?;
                    c.stop_on = None;
                    c.snapshot_every = None;
                    Ok((n, c))
                })
                .collect::<Result<_, Failure>>()?;
            benchmark_scaling(ModelKind::Abm, &spec.n_agents, spec.runs, spec.warmup, |n, r| {
                let c = &configs.iter().find(|(m, _)| *m == n).expect("size configured").1;
                let traj = simulate_abm(c, &mut stream(n, r).rng())?;
                Ok(Workload {
                    events: (traj.events.len() + traj.milestones.len()) as u64,
                    steps: traj.steps as u64,
                })
            })?
        }
        ModelKind::Smm | ModelKind::Pdmm => {
            let model = resolve_model(&cfg)?;
            let n0 = cfg.initial_integer_counts(model.n_status(), model.m)?;
            let n_base = n0.total().max(1.0);
            let ode_dt = cfg.run.ode_dt;
            let kind = cfg.model;
            benchmark_scaling(kind, &spec.n_agents, spec.runs, spec.warmup, |n, r| {
                let factor = n as f64 / n_base;
                let scaled = scale_contacts(&model, 1.0 / factor);
                let counts = scale_counts(&n0, factor);
                let mut rng = stream(n, r).rng();
                if kind == ModelKind::Smm {
                    let traj = simulate_ssa_with(&channels_from_model(&scaled), &counts, t_end, &SsaOptions::default(), &mut rng)?;
                    Ok(Workload {
                        events: traj.events.len() as u64,
                        steps: 0,
                    })
                } else {
                    let mut config = PdmmConfig::from_model(&scaled, counts.to_real(), t_end, ode_dt);
                    config.record_every = None;
                    let traj = simulate_pdmm(&config, &mut [], &mut rng)?;
                    Ok(Workload {
                        events: traj.jumps.len() as u64,
                        steps: traj.steps as u64,
                    })
                }
            })?
        }
        ModelKind::Covid => return Err(Failure::Schema("model: benchmark supports abm, smm and pdmm".into())),
    };
    let dir = &cfg.output.directory;
    io::write_benchmark(io::create(dir.join("benchmark.csv"))?, &table)?;
    io::write_json(dir.join("benchmark.json"), &table)?;
    let mut out = std::io::stdout().lock();
    for row in &table.rows {
        writeln!(
            out,
            "n_a = {:>7}  median {:.6} s  events {}",
            row.n_agents, row.median_seconds, row.events
        )?;
    }
    writeln!(out, "log-log slope {:.3}", table.slope)?;
    Ok(())
}
