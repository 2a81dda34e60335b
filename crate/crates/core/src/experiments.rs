//! Replica batches, comparison statistics and runtime benchmarks.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{PopulationState, RngStream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Abm,
    Smm,
    Pdmm,
    Covid,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Abm => "abm",
            Self::Smm => "smm",
            Self::Pdmm => "pdmm",
            Self::Covid => "covid",
        }
    }
}

/// Hex SHA-256 of a configuration's canonical text.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `f(replica, stream)` for every replica in parallel. Replica `r`
/// always gets stream `(seed, r)`; results come back in replica order.
pub fn run_replicas<T, F>(n_replicas: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, RngStream) -> Result<T> + Sync,
{
    (0..n_replicas)
        .into_par_iter()
        .map(|r| f(r, RngStream::new(seed, r as u64)))
        .collect()
}

/// Outputs of a batch of independent replicas of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaBatch {
    pub model: ModelKind,
    pub config_hash: String,
    pub seed: u64,
    pub n_replicas: usize,
    pub horizon: f64,
    pub critical_times: Vec<Option<f64>>,
    /// Final states flattened in status-major order.
    #[serde(default)]
    pub final_states: Vec<Vec<f64>>,
    #[serde(default)]
    pub mean_path: Option<MeanPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalTimeHistogram {
    pub bins: Vec<HistogramBin>,
    pub n_total: usize,
    pub n_observed: usize,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub median: Option<f64>,
    pub fraction_none: f64,
}

impl CriticalTimeHistogram {
    /// Probability mass per bin (relative to all replicas, including none).
    pub fn masses(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.count as f64 / self.n_total as f64).collect()
    }

    /// Midpoint of the fullest bin.
    pub fn mode(&self) -> Option<f64> {
        let best = self.bins.iter().max_by_key(|b| b.count)?;
        (best.count > 0).then_some(0.5 * (best.left + best.right))
    }
}

pub fn mean_stderr(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Some((mean, se))
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Histogram of the realised times over `bins` equal bins spanning
/// `range` (default: observed min to max). Missing times are counted in
/// `fraction_none`, not binned.
pub fn critical_time_histogram(times: &[Option<f64>], bins: usize, range: Option<(f64, f64)>) -> Result<CriticalTimeHistogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if times.is_empty() {
        return Err(Error::EmptySample);
    }
    let observed: Vec<f64> = times.iter().flatten().copied().collect();
    let fraction_none = (times.len() - observed.len()) as f64 / times.len() as f64;
    let mut out = CriticalTimeHistogram {
        bins: Vec::new(),
        n_total: times.len(),
        n_observed: observed.len(),
        mean: None,
        stderr: None,
        median: median(&observed),
        fraction_none,
    };
    if let Some((m, se)) = mean_stderr(&observed) {
        out.mean = Some(m);
        out.stderr = Some(se);
    }
    if observed.is_empty() {
        return Ok(out);
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi } else { lo + 1.0 })
    });
    let width = (hi - lo) / bins as f64;
    out.bins = (0..bins)
        .map(|b| HistogramBin {
            left: lo + b as f64 * width,
            right: lo + (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &t in &observed {
        if t < lo || t > hi {
            continue;
        }
        let b = (((t - lo) / width) as usize).min(bins - 1);
        out.bins[b].count += 1;
    }
    Ok(out)
}

/// Evenly spaced grid `0, dt, ..., t_end` (last point clamped to `t_end`).
pub fn time_grid(t_end: f64, n_points: usize) -> Vec<f64> {
    if n_points < 2 {
        return vec![0.0];
    }
    (0..n_points).map(|i| t_end * i as f64 / (n_points - 1) as f64).collect()
}

/// Pointwise replica mean and standard error on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPath {
    pub times: Vec<f64>,
    pub n_status: usize,
    pub n_subpop: usize,
    /// `mean[t]` in status-major layout.
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub n_replicas: usize,
}

impl MeanPath {
    pub fn get(&self, t_index: usize, status: usize, subpop: usize) -> f64 {
        self.mean[t_index][status * self.n_subpop + subpop]
    }
}

/// Mean of already resampled paths (each one state per grid point).
pub fn mean_trajectory(paths: &[Vec<PopulationState<f64>>]) -> Result<MeanPath> {
    let first = paths.first().ok_or(Error::EmptySample)?;
    let len = first.len();
    if paths.iter().any(|p| p.len() != len) {
        return Err(Error::Config("paths must share one grid".into()));
    }
    let n_status = first.first().map_or(0, PopulationState::n_status);
    let n_subpop = first.first().map_or(0, PopulationState::n_subpop);
    let width = n_status * n_subpop;
    let n = paths.len() as f64;
    let mut mean = vec![vec![0.0; width]; len];
    let mut sq = vec![vec![0.0; width]; len];
    for p in paths {
        for (t, s) in p.iter().enumerate() {
            for (c, &v) in s.as_slice().iter().enumerate() {
                mean[t][c] += v;
                sq[t][c] += v * v;
            }
        }
    }
    let mut stderr = vec![vec![0.0; width]; len];
    for t in 0..len {
        for c in 0..width {
            let m = mean[t][c] / n;
            mean[t][c] = m;
            if paths.len() > 1 {
                let var = ((sq[t][c] - n * m * m) / (n - 1.0)).max(0.0);
                stderr[t][c] = (var / n).sqrt();
            }
        }
    }
    Ok(MeanPath {
        times: first.iter().map(|s| s.time).collect(),
        n_status,
        n_subpop,
        mean,
        stderr,
        n_replicas: paths.len(),
    })
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample KS statistic of `sample` against the continuous `cdf`.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    Ok(s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max))
}

/// Asymptotic Kolmogorov survival function `P(K > x)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value of a one-sample statistic `d` with `n` points.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

/// Asymptotic p-value of a two-sample statistic.
pub fn ks_two_sample_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    ks_p_value(d, ne.round().max(1.0) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub n_agents: usize,
    pub median_seconds: f64,
    pub events: u64,
    pub steps: u64,
}

/// Work done by one benchmarked run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Workload {
    pub events: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub model: ModelKind,
    pub rows: Vec<BenchmarkRow>,
    pub slope: f64,
}

/// Least-squares slope of `log(median_seconds)` against `log(n_agents)`.
pub fn loglog_slope(rows: &[BenchmarkRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.n_agents as f64).ln(), r.median_seconds.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Median wall time of `runs` timed calls of `f(n_agents, run)` per agent
/// count, after `warmup` untimed calls. Runs are sequential so timings are
/// not distorted by other replicas.
pub fn benchmark_scaling<F>(model: ModelKind, n_agents: &[usize], runs: usize, warmup: usize, mut f: F) -> Result<BenchmarkTable>
where
    F: FnMut(usize, usize) -> Result<Workload>,
{
    if runs == 0 || n_agents.len() < 2 {
        return Err(Error::Config("benchmark needs >= 1 run and >= 2 agent counts".into()));
    }
    let mut rows = Vec::new();
    for &n in n_agents {
        for w in 0..warmup {
            f(n, usize::MAX - w)?;
        }
        let mut times = Vec::with_capacity(runs);
        let mut events = Vec::with_capacity(runs);
        let mut steps = 0;
        for r in 0..runs {
            let start = Instant::now();
            let work = f(n, r)?;
            times.push(start.elapsed().as_secs_f64());
            events.push(work.events as f64);
            steps = work.steps;
        }
        rows.push(BenchmarkRow {
            n_agents: n,
            median_seconds: median(&times).expect("runs > 0"),
            events: median(&events).expect("runs > 0") as u64,
            steps,
        });
    }
    let slope = loglog_slope(&rows);
    Ok(BenchmarkTable { model, rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    fn exp_sample(rate: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0).rng();
        let d = Exp::new(rate).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn histogram_all_none() {
        let h = critical_time_histogram(&[None, None], 10, None).unwrap();
        assert!(h.bins.is_empty());
        assert_eq!(h.fraction_none, 1.0);
        assert!(critical_time_histogram(&[], 10, None).is_err());
        assert!(critical_time_histogram(&[Some(1.0)], 0, None).is_err());
    }

    #[test]
    fn histogram_mass_and_exponential_mean() {
        let mut times: Vec<Option<f64>> = exp_sample(0.05, 10_000, 1).into_iter().map(Some).collect();
        times.extend([None; 500]);
        let h = critical_time_histogram(&times, 40, None).unwrap();
        let mass: f64 = h.masses().iter().sum();
        assert!((mass + h.fraction_none - 1.0).abs() < 1e-12);
        let (m, se) = (h.mean.unwrap(), h.stderr.unwrap());
        assert!((m - 20.0).abs() < 3.0 * se, "{m} +- {se}");
    }

    #[test]
    fn ks_cases() {
        let a = exp_sample(1.0, 10_000, 2);
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        let b = exp_sample(1.0, 10_000, 3);
        assert!(ks_distance(&a, &b).unwrap() < 0.03);
        assert_eq!(ks_distance(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert!(ks_distance(&[], &[1.0]).is_err());
        // Ties across samples.
        assert_eq!(ks_distance(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Classical critical values: P(K > 1.358) = 0.05, P(K > 1.628) = 0.01.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-3);
        let s = exp_sample(2.0, 10_000, 5);
        let d = ks_one_sample(&s, |x| 1.0 - (-2.0 * x).exp()).unwrap();
        assert!(ks_p_value(d, s.len()) > 0.01);
    }

    #[test]
    fn mean_path_of_one_replica_is_the_path() {
        let path: Vec<PopulationState<f64>> = (0..3)
            .map(|t| {
                let mut s = PopulationState::from_rows(&[vec![t as f64, 1.0]]).unwrap();
                s.time = t as f64;
                s
            })
            .collect();
        let m = mean_trajectory(std::slice::from_ref(&path)).unwrap();
        assert_eq!(m.times, vec![0.0, 1.0, 2.0]);
        assert_eq!(m.get(2, 0, 0), 2.0);
        assert_eq!(m.stderr[2][0], 0.0);
    }

    #[test]
    fn replicas_are_ordered_and_reproducible() {
        let f = |r: usize, s: RngStream| -> Result<(usize, u64)> {
            use rand::Rng;
            Ok((r, s.rng().random::<u64>()))
        };
        let a = run_replicas(50, 9, f).unwrap();
        let b = run_replicas(50, 9, f).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, x)| x.0 == i));
        let sub = run_replicas(10, 9, f).unwrap();
        assert_eq!(&a[..10], &sub[..]);
    }

    #[test]
    fn slope_of_power_law() {
        let rows: Vec<BenchmarkRow> = [100, 1000, 10_000]
            .iter()
            .map(|&n| BenchmarkRow {
                n_agents: n,
                median_seconds: 1e-6 * n as f64,
                events: 0,
                steps: 0,
            })
            .collect();
        assert!((loglog_slope(&rows) - 1.0).abs() < 1e-12);
        assert_eq!(config_hash("a"), config_hash("a"));
        assert_ne!(config_hash("a"), config_hash("b"));
    }
}
