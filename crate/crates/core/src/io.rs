//! CSV and JSON writers for simulation outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::abm::{AdoptionEvent, MilestoneEvent};
use crate::domain::{PopulationState, StatusSpace, SystemState};
use crate::epidemics::{ScenarioReplica, STATUS_LABELS};
use crate::error::{Error, Result};
use crate::experiments::{BenchmarkTable, CriticalTimeHistogram};
use crate::pdmm::{PdmmJump, PhaseChange};
use crate::smm::SmmTrajectory;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Buffered file writer, creating parent directories.
pub fn create(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// `time,agent,from,to`.
pub fn write_abm_events<W: Write>(w: W, events: &[AdoptionEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "agent", "from", "to"]).map_err(csv_err)?;
    for e in events {
        out.serialize((e.time, e.agent, e.from, e.to)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `time,agent,status,from,to` with `from` empty for a first visit.
pub fn write_milestones<W: Write>(w: W, events: &[MilestoneEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "agent", "status", "from", "to"]).map_err(csv_err)?;
    for e in events {
        out.serialize((e.time, e.agent, e.status, e.from, e.to)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Wide per-status counts: `time,<label>...`.
pub fn write_snapshot_counts<W: Write>(w: W, statuses: &StatusSpace, snapshots: &[SystemState]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend(statuses.labels().iter().cloned());
    out.write_record(&header).map_err(csv_err)?;
    for s in snapshots {
        let mut row = vec![s.time.to_string()];
        row.extend(s.status_counts(statuses.len()).iter().map(ToString::to_string));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `time,kind,i,j,k,l`; jumps have `i == j`, adoptions `k == l`.
pub fn write_smm_events<W: Write>(w: W, traj: &SmmTrajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "kind", "i", "j", "k", "l"]).map_err(csv_err)?;
    for e in &traj.events {
        let (kind, i, j, k, l) = traj.kinds[e.channel].csv_fields();
        out.serialize((e.time, kind, i, j, k, l)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Long-format state path `time,status,subpop,<value_name>`.
pub fn write_state_path<W: Write, T>(w: W, states: &[PopulationState<T>], value_name: &str) -> Result<()>
where
    T: Copy + Default + Serialize,
{
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "status", "subpop", value_name]).map_err(csv_err)?;
    for s in states {
        for i in 0..s.n_status() {
            for k in 0..s.n_subpop() {
                out.serialize((s.time, i, k, s.get(i, k))).map_err(csv_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `time,status,from,to`.
pub fn write_jumps<W: Write>(w: W, jumps: &[PdmmJump]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "status", "from", "to"]).map_err(csv_err)?;
    for j in jumps {
        out.serialize((j.time, j.status, j.from, j.to)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `time,subpop,phase`.
pub fn write_phases<W: Write>(w: W, phases: &[PhaseChange]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "subpop", "phase"]).map_err(csv_err)?;
    for p in phases {
        out.serialize((p.time, p.subpop, &p.phase)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `bin_left,bin_right,count`.
pub fn write_histogram<W: Write>(w: W, hist: &CriticalTimeHistogram) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_left", "bin_right", "count"]).map_err(csv_err)?;
    for b in &hist.bins {
        out.serialize((b.left, b.right, b.count)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `n_a,median_seconds,events`.
pub fn write_benchmark<W: Write>(w: W, table: &BenchmarkTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n_a", "median_seconds", "events"]).map_err(csv_err)?;
    for r in &table.rows {
        out.serialize((r.n_agents, r.median_seconds, r.events)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `replica,critical_time_or_none,final_S1,...,final_D<m>,t1_1,t2_1,...`.
pub fn write_scenario_replicas<W: Write>(w: W, m: usize, replicas: &[ScenarioReplica]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["replica".to_string(), "critical_time_or_none".to_string()];
    for label in STATUS_LABELS {
        for k in 1..=m {
            header.push(format!("final_{label}{k}"));
        }
    }
    for k in 1..=m {
        header.push(format!("t1_{k}"));
        header.push(format!("t2_{k}"));
    }
    out.write_record(&header).map_err(csv_err)?;
    for r in replicas {
        let mut row = vec![r.replica.to_string(), fmt_opt(r.critical_time)];
        for i in 0..STATUS_LABELS.len() {
            for k in 0..m {
                row.push(r.final_state.get(i, k).to_string());
            }
        }
        for k in 0..m {
            row.push(fmt_opt(r.t1[k]));
            row.push(fmt_opt(r.t2[k]));
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
