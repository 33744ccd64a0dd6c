//! Writing run artifacts to an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::engine::{RunResult, Warnings};
use crate::error::OutputError;
use crate::schedule::format_record;
use crate::stats::{Report, SlotRecord};

pub const ENERGY_TRACE: &str = "energy_trace.csv";
pub const RATE_TRACE: &str = "rate_trace.csv";
pub const STATS: &str = "stats.json";
pub const SCHEDULE: &str = "schedule.txt";
pub const MANIFEST: &str = "run_manifest.json";
pub const DEBUG_SWITCH_TIMES: &str = "debug_switch_times.log";
pub const DEBUG_STRATEGY: &str = "debug_strategy.log";
pub const DEBUG_NONSWITCH: &str = "debug_nonswitch_shift.log";

/// Contents of `stats.json`.
#[derive(Debug, Clone, Serialize)]
pub struct StatsFile<'a> {
    pub strategy: &'a str,
    pub seed: u64,
    pub initial_routing: Vec<u8>,
    #[serde(flatten)]
    pub report: &'a Report,
    pub warnings: &'a Warnings,
}

fn write(path: PathBuf, body: impl AsRef<[u8]>) -> Result<(), OutputError> {
    fs::write(&path, body).map_err(|source| OutputError::Io { path, source })
}

pub fn energy_trace_csv(rows: &[SlotRecord], num_nodes: usize) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["slot".to_string()];
    header.extend((1..=num_nodes).map(|i| format!("node_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.slot.to_string()];
        rec.extend(r.levels.iter().map(|l| l.to_string()));
        w.write_record(&rec)?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

pub fn rate_trace_csv(rows: &[SlotRecord], num_sources: usize) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["slot".to_string()];
    header.extend((1..=num_sources).map(|i| format!("source_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.slot.to_string()];
        rec.extend(r.rates.iter().map(|g| g.to_string()));
        w.write_record(&rec)?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

pub fn stats_json(cfg: &RunConfig, result: &RunResult, report: &Report) -> Result<String, OutputError> {
    let f = StatsFile {
        strategy: cfg.strategy.kind.name(),
        seed: cfg.seed,
        initial_routing: result.initial_routing.numbers(),
        report,
        warnings: &result.warnings,
    };
    let mut s = serde_json::to_string_pretty(&f)?;
    s.push('\n');
    Ok(s)
}

fn lines(v: &[String]) -> String {
    let mut s = v.join("\n");
    if !s.is_empty() {
        s.push('\n');
    }
    s
}

/// Writes every artifact of one run into `dir`, creating it if needed.
/// Returns the report that went into `stats.json`.
pub fn write_run(dir: &Path, cfg: &RunConfig, result: &RunResult) -> Result<Report, OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.to_path_buf(), source })?;
    let report = result.stats.finalize(cfg.num_ss_slots);
    let rows = &result.stats.trace;
    write(dir.join(ENERGY_TRACE), energy_trace_csv(rows, cfg.topology.num_intermediates())?)?;
    write(dir.join(RATE_TRACE), rate_trace_csv(rows, cfg.num_sources())?)?;
    write(dir.join(STATS), stats_json(cfg, result, &report)?)?;
    write(dir.join(SCHEDULE), format_record(&result.schedules))?;
    write(dir.join(MANIFEST), cfg.manifest_json())?;
    let d = &result.debug;
    for (name, v) in [
        (DEBUG_SWITCH_TIMES, &d.switch_times),
        (DEBUG_STRATEGY, &d.strategy),
        (DEBUG_NONSWITCH, &d.nonswitch_shift),
    ] {
        if !v.is_empty() {
            write(dir.join(name), lines(v))?;
        }
    }
    Ok(report)
}
