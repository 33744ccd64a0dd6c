//! Parameter sweeps: one axis, several values, repeated runs averaged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{load_config, RunConfig};
use crate::engine::{self, RunOptions};
use crate::error::{ConfigError, OutputError};
use crate::model::PathSel;
use crate::output::write_run;
use crate::stats::Summary;
use crate::strategy::StrategyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Cartesian product of initial routes over all sources.
    InitialRouting,
    /// One value for all three pause limits.
    ShiftPause,
    /// One value for every switch threshold.
    Threshold,
    AllowedDrift,
}

impl Axis {
    pub fn title(self) -> &'static str {
        match self {
            Axis::InitialRouting => "Initial Route",
            Axis::ShiftPause => "Shift pause",
            Axis::Threshold => "Threshold",
            Axis::AllowedDrift => "Allowed Drift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    Routing(Vec<u8>),
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Number(x) => write!(f, "{x}"),
            AxisValue::Routing(r) => {
                let parts: Vec<String> = r.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

fn default_repetitions() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Base run config, relative to the spec file.
    pub base: PathBuf,
    pub axis: Axis,
    /// May be empty for `initial_routing`, meaning every combination.
    #[serde(default)]
    pub values: Vec<AxisValue>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// Defaults to the base config's seed.
    #[serde(default)]
    pub seed_base: Option<u64>,
    #[serde(default)]
    pub strategy: Option<StrategyKind>,
    #[serde(default)]
    pub num_slots: Option<u64>,
}

/// Reads a sweep spec and its base config.
pub fn load_sweep(path: impl AsRef<Path>) -> Result<(SweepSpec, RunConfig), ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let spec: SweepSpec = serde_path_to_error::deserialize(de)
        .map_err(|e| ConfigError::Schema { field: e.path().to_string(), message: e.inner().to_string() })?;
    let base = path.parent().unwrap_or(Path::new("")).join(&spec.base);
    let mut cfg = load_config(base)?;
    if let Some(k) = spec.strategy {
        cfg.strategy.kind = k;
    }
    if let Some(n) = spec.num_slots {
        cfg.set_num_slots(n);
    }
    cfg.validate()?;
    Ok((spec, cfg))
}

/// One value of the axis applied to the base config.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: AxisValue,
    pub config: RunConfig,
}

fn all_routings(n: usize) -> Vec<Vec<u8>> {
    (0..1usize << n)
        .map(|bits| (0..n).map(|i| if bits >> (n - 1 - i) & 1 == 1 { 2 } else { 1 }).collect())
        .collect()
}

/// Derives one config per axis value.
pub fn expand(spec: &SweepSpec, base: &RunConfig) -> Result<Vec<SweepPoint>, ConfigError> {
    if spec.repetitions == 0 {
        return Err(ConfigError::invalid("repetitions", "must be at least 1"));
    }
    let mut values = spec.values.clone();
    if values.is_empty() {
        if spec.axis != Axis::InitialRouting {
            return Err(ConfigError::invalid("values", "must not be empty"));
        }
        values = all_routings(base.num_sources()).into_iter().map(AxisValue::Routing).collect();
    }
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        let field = format!("values[{i}]");
        let mut cfg = base.clone();
        match (spec.axis, &v) {
            (Axis::InitialRouting, AxisValue::Routing(r)) => {
                if r.len() != cfg.num_sources() {
                    return Err(ConfigError::invalid(field, format!("needs {} routes", cfg.num_sources())));
                }
                let routes = r
                    .iter()
                    .map(|&n| PathSel::from_number(n).ok_or_else(|| ConfigError::invalid(&field, "routes must be 1 or 2")))
                    .collect::<Result<Vec<_>, _>>()?;
                cfg.set_initial_routing(&routes);
            }
            (Axis::InitialRouting, AxisValue::Number(x)) if cfg.num_sources() == 1 && (*x == 1.0 || *x == 2.0) => {
                cfg.set_initial_routing(&[PathSel::from_number(*x as u8).unwrap()]);
            }
            (Axis::ShiftPause, AxisValue::Number(x)) if *x >= 0.0 && x.fract() == 0.0 => cfg.set_all_pauses(*x as u32),
            (Axis::Threshold, AxisValue::Number(x)) => cfg.set_all_thresholds(*x),
            (Axis::AllowedDrift, AxisValue::Number(x)) => cfg.strategy.allowed_drift = *x,
            _ => return Err(ConfigError::invalid(field, format!("not a valid {} value", spec.axis.title()))),
        }
        cfg.validate().map_err(|e| ConfigError::invalid(&field, e.to_string()))?;
        out.push(SweepPoint { value: v, config: cfg });
    }
    Ok(out)
}

/// Result of one run within a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRun {
    pub repetition: u32,
    pub seed: u64,
    pub summary: Summary,
    pub fatal: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: AxisValue,
    pub runs: Vec<SweepRun>,
    pub mean_fractions: Vec<(Vec<u8>, f64)>,
    pub mean_switches: Vec<f64>,
    pub mean_sent: Vec<f64>,
    pub mean_delivered: Vec<f64>,
    pub mean_dropped: f64,
    pub mean_total_delivered: f64,
    pub mean_total_switches: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on
/// and `jobs` is not 1.
pub fn map_runs<T, R, F>(items: &[T], jobs: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs != Some(1) {
            use rayon::prelude::*;
            let Some(j) = jobs else {
                return items.par_iter().map(&f).collect();
            };
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(j).build() {
                return pool.install(|| items.par_iter().map(&f).collect());
            }
        }
    }
    let _ = jobs;
    items.iter().map(f).collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn aggregate(value: AxisValue, runs: Vec<SweepRun>) -> SweepRow {
    let ns = runs.first().map_or(0, |r| r.summary.sent.len());
    let per_source = |pick: fn(&Summary) -> &Vec<u64>| -> Vec<f64> {
        (0..ns).map(|s| mean(runs.iter().map(|r| pick(&r.summary)[s] as f64))).collect()
    };
    let mut states: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    for r in &runs {
        for f in &r.summary.routing_fractions {
            *states.entry(f.state.clone()).or_default() += f.fraction / runs.len() as f64;
        }
    }
    SweepRow {
        mean_fractions: states.into_iter().collect(),
        mean_switches: per_source(|s| &s.switches),
        mean_sent: per_source(|s| &s.sent),
        mean_delivered: per_source(|s| &s.delivered),
        mean_dropped: mean(runs.iter().map(|r| r.summary.total_dropped as f64)),
        mean_total_delivered: mean(runs.iter().map(|r| r.summary.total_delivered as f64)),
        mean_total_switches: mean(runs.iter().map(|r| r.summary.total_switches as f64)),
        value,
        runs,
    }
}

fn dir_label(v: &AxisValue) -> String {
    v.to_string().replace(['[', ']'], "").replace(',', "_")
}

/// Runs every point `repetitions` times with seeds `seed_base + k`.
/// Per-run artifacts go to `out/<value>/rep<k>/` when `out` is given.
pub fn run_points(
    axis: Axis,
    points: &[SweepPoint],
    repetitions: u32,
    seed_base: u64,
    jobs: Option<usize>,
    out: Option<&Path>,
) -> Result<SweepReport, OutputError> {
    let tasks: Vec<(usize, u32)> = (0..points.len()).flat_map(|p| (0..repetitions).map(move |k| (p, k))).collect();
    let results = map_runs(&tasks, jobs, |&(p, k)| -> Result<SweepRun, OutputError> {
        let mut cfg = points[p].config.clone();
        cfg.seed = seed_base + k as u64;
        let result = engine::run(&cfg, RunOptions::default());
        let summary = match out {
            Some(dir) => {
                let d = dir.join(dir_label(&points[p].value)).join(format!("rep{k}"));
                write_run(&d, &cfg, &result)?.summary
            }
            None => result.stats.finalize(cfg.num_ss_slots).summary,
        };
        Ok(SweepRun { repetition: k, seed: cfg.seed, summary, fatal: result.fatal.map(|f| f.to_string()) })
    });
    let mut grouped: Vec<Vec<SweepRun>> = vec![Vec::new(); points.len()];
    for (&(p, _), r) in tasks.iter().zip(results) {
        grouped[p].push(r?);
    }
    let rows = points.iter().zip(grouped).map(|(pt, runs)| aggregate(pt.value.clone(), runs)).collect();
    Ok(SweepReport { axis, rows })
}

/// Expands and runs a spec.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &RunConfig,
    jobs: Option<usize>,
    out: Option<&Path>,
) -> Result<SweepReport, Box<dyn std::error::Error + Send + Sync>> {
    let points = expand(spec, base)?;
    let seed = spec.seed_base.unwrap_or(base.seed);
    Ok(run_points(spec.axis, &points, spec.repetitions, seed, jobs, out)?)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn fractions_text(f: &[(Vec<u8>, f64)]) -> String {
    f.iter().map(|(_, x)| format!("{x:.2}")).collect::<Vec<_>>().join("; ")
}

fn run_fractions(s: &Summary) -> Vec<(Vec<u8>, f64)> {
    s.routing_fractions.iter().map(|f| (f.state.clone(), f.fraction)).collect()
}

fn state_keys(f: &[(Vec<u8>, f64)]) -> String {
    f.iter()
        .map(|(s, x)| format!("{}={x}", AxisValue::Routing(s.clone())))
        .collect::<Vec<_>>()
        .join(";")
}

impl SweepReport {
    /// CSV with one line per run followed by one `mean` line per value.
    pub fn to_csv(&self) -> Result<Vec<u8>, OutputError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "axis",
            "value",
            "repetition",
            "seed",
            "routing_state_statistic",
            "switches_per_source",
            "packets_sent_by_source",
            "packets_at_sink",
            "dropped_packets",
            "fatal",
        ])?;
        let axis = serde_json::to_value(self.axis)?.as_str().unwrap_or_default().to_string();
        for row in &self.rows {
            let v = row.value.to_string();
            for r in &row.runs {
                w.write_record([
                    axis.clone(),
                    v.clone(),
                    r.repetition.to_string(),
                    r.seed.to_string(),
                    state_keys(&run_fractions(&r.summary)),
                    join(&r.summary.switches),
                    join(&r.summary.sent),
                    join(&r.summary.delivered),
                    r.summary.total_dropped.to_string(),
                    r.fatal.clone().unwrap_or_default(),
                ])?;
            }
            w.write_record([
                axis.clone(),
                v.clone(),
                "mean".into(),
                String::new(),
                state_keys(&row.mean_fractions),
                join(&row.mean_switches),
                join(&row.mean_sent),
                join(&row.mean_delivered),
                row.mean_dropped.to_string(),
                String::new(),
            ])?;
        }
        Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
    }

    /// Tab-separated table for reading.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{}\tRouting State Statistic\tSwitches per source\tPackets sent by source\tPackets at sink\tDropped Packets",
            self.axis.title()
        )
        .unwrap();
        for row in &self.rows {
            for r in &row.runs {
                let fatal = r.fatal.as_ref().map(|f| format!("\tFATAL: {f}")).unwrap_or_default();
                writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}{fatal}",
                    row.value,
                    fractions_text(&run_fractions(&r.summary)),
                    join(&r.summary.switches),
                    join(&r.summary.sent),
                    join(&r.summary.delivered),
                    r.summary.total_dropped
                )
                .unwrap();
            }
            let f1 = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(" ");
            writeln!(
                s,
                "{} mean\t{}\t{}\t{}\t{}\t{:.1}",
                row.value,
                fractions_text(&row.mean_fractions),
                f1(&row.mean_switches),
                f1(&row.mean_sent),
                f1(&row.mean_delivered),
                row.mean_dropped
            )
            .unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routings_enumerated() {
        assert_eq!(all_routings(2), vec![vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]]);
        assert_eq!(all_routings(1), vec![vec![1], vec![2]]);
    }

    #[test]
    fn value_labels() {
        assert_eq!(AxisValue::Number(3.5).to_string(), "3.5");
        assert_eq!(AxisValue::Number(3.0).to_string(), "3");
        assert_eq!(AxisValue::Routing(vec![1, 2]).to_string(), "[1,2]");
        assert_eq!(dir_label(&AxisValue::Routing(vec![1, 2])), "1_2");
    }

    #[test]
    fn map_runs_keeps_order() {
        let xs: Vec<u32> = (0..50).collect();
        assert_eq!(map_runs(&xs, Some(3), |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(map_runs(&xs, Some(1), |x| x + 1)[49], 50);
    }
}
