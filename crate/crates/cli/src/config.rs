//! Run configuration files and their resolution into simulator inputs.

use std::path::{Path, PathBuf};

use popsim::abm::{AbmConfig, CriticalWatch, InitialCondition, SeedGroup};
use popsim::domain::SpatialRate;
use popsim::epidemics::{Scenario, SeirdParams};
use popsim::experiments::{config_hash, ModelKind};
use popsim::projection::{ProjectedModel, DEFAULT_SAMPLES};
use popsim::{Aabb, AdoptionRuleSet, FirstOrderRule, PopulationState, Potential, Region, SecondOrderRule, SpatialPartition, StatusSpace};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statuses: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
    #[serde(default)]
    pub rules: Rules,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Rates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Initial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical: Option<Critical>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSpec>,
    pub run: RunSpec,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    #[serde(default)]
    pub potential: Potential,
    pub sigma: f64,
    pub partition: SpatialPartition,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rules {
    #[serde(default)]
    pub first_order: Vec<FirstOrderSpec>,
    #[serde(default)]
    pub second_order: Vec<SecondOrderSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstOrderSpec {
    pub from: String,
    pub to: String,
    pub rate: SpatialRate,
}

/// Contact rule; `via` defaults to `to` (Doi copying rule).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondOrderSpec {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<String>,
    pub rate: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rates {
    /// Projected model given inline.
    Model { model: Box<ProjectedModel> },
    /// Projected model JSON file, relative to the config file.
    File { path: PathBuf },
    /// Estimate from a calibration run of the ABM described by `geometry`.
    Estimate {
        calibration: Calibration,
        #[serde(default = "default_samples")]
        n_samples: usize,
        #[serde(default)]
        per_status: bool,
    },
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

/// Pure-diffusion run used for milestone rate estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub n_agents: usize,
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    /// `counts[status][subpop]` for the metapopulation models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<AgentInit>,
}

/// Agents drawn from the stationary density of the motion.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentInit {
    pub n_agents: usize,
    pub background: String,
    #[serde(default)]
    pub seeds: Vec<SeedSpec>,
    /// Defaults to the partition's sampling box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Aabb>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub status: String,
    pub count: usize,
    pub region: Region,
}

/// First move of a `status` agent from subpopulation `from` to `to`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Critical {
    pub status: String,
    pub from: usize,
    pub to: usize,
    /// End each replica at the critical transition.
    #[serde(default = "yes")]
    pub stop: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub which: Scenario,
    #[serde(default)]
    pub params: SeirdParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub n_agents: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
}

fn default_runs() -> usize {
    5
}

fn default_warmup() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Horizon; the covid model uses `scenario.params.horizon` instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_ode_dt")]
    pub ode_dt: f64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    /// State-path stride in Euler steps for written PDMM trajectories.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_dt() -> f64 {
    0.01
}

fn default_ode_dt() -> f64 {
    1e-3
}

fn default_replicas() -> usize {
    1
}

fn default_record_every() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    /// ABM snapshot stride in steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    /// Write per-replica files for at most this many replicas (all if unset).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_bins() -> usize {
    40
}

impl Default for Output {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            snapshot_every: None,
            trajectories: None,
            histogram_bins: default_bins(),
        }
    }
}

/// Command-line overrides; everything structural lives in the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn schema(msg: impl Into<String>) -> Failure {
    Failure::Schema(msg.into())
}

impl RunConfig {
    /// Reads and parses `path`; file-relative paths are made absolute so the
    /// resolved echo can be re-run from anywhere.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| schema(format!("{}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let mut cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let at = e.path().to_string();
            schema(format!("{}: at `{at}`: {}", path.display(), e.inner()))
        })?;
        if let Some(Rates::File { path: p }) = &mut cfg.rates {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                *p = std::path::absolute(base.join(&*p)).map_err(|e| schema(format!("rates.path: {e}")))?;
            }
        }
        if let Some(r) = overrides.replicas {
            cfg.run.replicas = r;
        }
        if let Some(s) = overrides.seed {
            cfg.run.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.output.directory = o.clone();
        }
        Ok(cfg)
    }

    /// Hash of everything except the output section.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output");
        }
        config_hash(&v.to_string())
    }

    pub fn status_space(&self) -> Result<StatusSpace, Failure> {
        if self.model == ModelKind::Covid {
            return Ok(popsim::epidemics::status_space());
        }
        let labels = self.statuses.as_ref().ok_or_else(|| schema("statuses: required for this model"))?;
        StatusSpace::new(labels.iter().cloned()).map_err(|e| schema(format!("statuses: {e}")))
    }

    pub fn geometry(&self) -> Result<&Geometry, Failure> {
        let g = self.geometry.as_ref().ok_or_else(|| schema("geometry: required for this model"))?;
        if !(g.sigma > 0.0 && g.sigma.is_finite()) {
            return Err(schema(format!("geometry.sigma: {} must be > 0", g.sigma)));
        }
        Ok(g)
    }

    pub fn t_end(&self) -> Result<f64, Failure> {
        if let (ModelKind::Covid, Some(s)) = (self.model, &self.scenario) {
            return Ok(s.params.horizon);
        }
        match self.run.t_end {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => Err(schema(format!("run.t_end: {t} must be > 0"))),
            None => Err(schema("run.t_end: required for this model")),
        }
    }

    pub fn adoption_rules(&self, statuses: &StatusSpace) -> Result<AdoptionRuleSet, Failure> {
        let idx = |key: String, label: &str| {
            statuses
                .index_of(label)
                .ok_or_else(|| schema(format!("{key}: unknown status label \"{label}\"")))
        };
        let mut first = Vec::new();
        for (n, r) in self.rules.first_order.iter().enumerate() {
            first.push(FirstOrderRule {
                from: idx(format!("rules.first_order[{n}].from"), &r.from)?,
                to: idx(format!("rules.first_order[{n}].to"), &r.to)?,
                rate: r.rate.clone(),
            });
        }
        let mut second = Vec::new();
        for (n, r) in self.rules.second_order.iter().enumerate() {
            let to = idx(format!("rules.second_order[{n}].to"), &r.to)?;
            second.push(SecondOrderRule {
                from: idx(format!("rules.second_order[{n}].from"), &r.from)?,
                to,
                via: match &r.via {
                    Some(v) => idx(format!("rules.second_order[{n}].via"), v)?,
                    None => to,
                },
                rate: r.rate,
                radius: r.radius,
            });
        }
        let rules = AdoptionRuleSet::new(first, second);
        rules.validate(statuses.len()).map_err(|e| schema(format!("rules: {e}")))?;
        Ok(rules)
    }

    pub fn critical_status(&self, statuses: &StatusSpace) -> Result<Option<(usize, &Critical)>, Failure> {
        let Some(c) = &self.critical else { return Ok(None) };
        let s = statuses
            .index_of(&c.status)
            .ok_or_else(|| schema(format!("critical.status: unknown status label \"{}\"", c.status)))?;
        Ok(Some((s, c)))
    }

    /// Initial count matrix, checked against the model shape.
    pub fn initial_counts(&self, n_status: usize, m: usize) -> Result<PopulationState<f64>, Failure> {
        let rows = self
            .initial
            .as_ref()
            .and_then(|i| i.counts.as_ref())
            .ok_or_else(|| schema("initial.counts: required for this model"))?;
        let n = PopulationState::from_rows(rows).map_err(|e| schema(format!("initial.counts: {e}")))?;
        if n.n_status() != n_status || n.n_subpop() != m {
            return Err(schema(format!(
                "initial.counts: {}x{} matrix, model needs {n_status}x{m}",
                n.n_status(),
                n.n_subpop()
            )));
        }
        n.check_nonnegative().map_err(|e| schema(format!("initial.counts: {e}")))?;
        Ok(n)
    }

    pub fn initial_integer_counts(&self, n_status: usize, m: usize) -> Result<PopulationState<u32>, Failure> {
        let n = self.initial_counts(n_status, m)?;
        let rows: Vec<Vec<u32>> = n
            .rows()
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|v| if v.fract() == 0.0 { Ok(v as u32) } else { Err(v) })
                    .collect()
            })
            .collect::<Result<_, f64>>()
            .map_err(|v| schema(format!("initial.counts: {v} is not an integer")))?;
        Ok(PopulationState::from_rows(&rows).expect("shape checked above"))
    }

    /// ABM inputs for `n_agents` agents (defaults to the configured count)
    /// and contact constants multiplied by `contact_scale`.
    pub fn abm_config(&self, statuses: &StatusSpace, n_agents: Option<usize>, contact_scale: f64) -> Result<AbmConfig, Failure> {
        let g = self.geometry()?;
        let mut rules = self.adoption_rules(statuses)?;
        rules.second_order.iter_mut().for_each(|r| r.rate *= contact_scale);
        let init = self
            .initial
            .as_ref()
            .and_then(|i| i.agents.as_ref())
            .ok_or_else(|| schema("initial.agents: required for the abm model"))?;
        let status = |key: String, label: &str| {
            statuses
                .index_of(label)
                .ok_or_else(|| schema(format!("{key}: unknown status label \"{label}\"")))
        };
        let base = init.n_agents.max(1);
        let n = n_agents.unwrap_or(init.n_agents);
        let mut seeds = Vec::new();
        for (idx, s) in init.seeds.iter().enumerate() {
            let count = if n == init.n_agents {
                s.count
            } else {
                (s.count * n / base).max(usize::from(s.count > 0))
            };
            seeds.push(SeedGroup {
                status: status(format!("initial.agents.seeds[{idx}].status"), &s.status)?,
                count,
                region: s.region,
            });
        }
        let stop_on = match self.critical_status(statuses)? {
            Some((s, c)) if c.stop => Some(CriticalWatch {
                status: s,
                from: c.from,
                to: c.to,
            }),
            _ => None,
        };
        let config = AbmConfig {
            n_status: statuses.len(),
            sigma: g.sigma,
            dt: self.run.dt,
            t_end: self.t_end()?,
            potential: g.potential,
            rules,
            initial: InitialCondition::Stationary {
                n_agents: n,
                background: status("initial.agents.background".into(), &init.background)?,
                seeds,
                bounds: init.bounds.unwrap_or(*g.partition.sampling_box()),
            },
            milestones: Some(g.partition.clone()),
            snapshot_every: self.output.snapshot_every,
            stop_on,
        };
        config.validate().map_err(|e| schema(e.to_string()))?;
        Ok(config)
    }

    pub fn scenario(&self) -> Result<&ScenarioSpec, Failure> {
        let s = self
            .scenario
            .as_ref()
            .ok_or_else(|| schema("scenario: required for the covid model"))?;
        s.params.validate().map_err(|e| schema(format!("scenario.params: {e}")))?;
        Ok(s)
    }

    pub fn check_run(&self) -> Result<(), Failure> {
        if self.run.replicas == 0 {
            return Err(schema("run.replicas: must be >= 1"));
        }
        for (key, v) in [("run.dt", self.run.dt), ("run.ode_dt", self.run.ode_dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(schema(format!("{key}: {v} must be > 0")));
            }
        }
        if self.output.histogram_bins == 0 {
            return Err(schema("output.histogram_bins: must be >= 1"));
        }
        Ok(())
    }
}
