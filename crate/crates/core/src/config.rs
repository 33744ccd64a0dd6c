//! JSON run configuration: schema, defaults, validation and the manifest.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::{derive_costs, EnergyCostModel, HarvestSource, RawEnergyParams};
use crate::error::ConfigError;
use crate::model::{Endpoint, NodeId, PathSel, Topology};
use crate::strategy::{DriftMode, PauseLimits, StrategyKind, StrategyParams};

/// Harvest values above this are a legacy request to read a trace file.
pub const LEGACY_TRACE_TRIGGER: f64 = 100.0;

/// A link endpoint as written in the file: `"s1"`, `"d"`, `"3"` or `3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointSpec(pub Endpoint);

impl fmt::Display for EndpointSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl EndpointSpec {
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let bad = || format!("bad endpoint {s:?} (expected s<k>, d or a node number)");
        if s == "d" || s == "D" {
            return Ok(EndpointSpec(Endpoint::Destination));
        }
        if let Some(k) = s.strip_prefix(['s', 'S']) {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            return Ok(EndpointSpec(Endpoint::Source(k - 1)));
        }
        s.parse::<u32>().map(|n| EndpointSpec(Endpoint::Node(NodeId(n)))).map_err(|_| bad())
    }
}

impl Serialize for EndpointSpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for EndpointSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(n) => Ok(EndpointSpec(Endpoint::Node(NodeId(n)))),
            Raw::Text(s) => EndpointSpec::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub num_intermediates: usize,
    /// Undirected adjacency edges.
    pub links: Vec<[EndpointSpec; 2]>,
    /// Per source, its two paths as node lists (destination implicit).
    pub paths: Vec<[Vec<u32>; 2]>,
    /// Plot coordinates, carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<serde_json::Value>,
}

impl TopologySection {
    pub fn build(&self) -> Topology {
        Topology::new(
            self.paths.len(),
            self.num_intermediates,
            self.links.iter().map(|[a, b]| (a.0, b.0)),
            self.paths
                .iter()
                .map(|[a, b]| [a.iter().map(|&n| NodeId(n)).collect(), b.iter().map(|&n| NodeId(n)).collect()])
                .collect(),
        )
    }
}

fn default_num_slots() -> u64 {
    10000
}
fn default_high_danger() -> f64 {
    90.0
}
fn default_low_danger() -> f64 {
    200.0
}
fn default_allowed_drift() -> f64 {
    0.003
}
fn default_seed() -> u64 {
    1
}
fn default_strategy() -> StrategyKind {
    StrategyKind::Estimate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_strategy")]
    pub strategy: StrategyKind,
    #[serde(default = "default_num_slots")]
    pub num_slots: u64,
    /// Length of the trailing steady-state window; defaults to `num_slots`.
    #[serde(default)]
    pub num_ss_slots: Option<u64>,
    #[serde(default = "default_high_danger")]
    pub high_danger: f64,
    #[serde(default = "default_low_danger")]
    pub low_danger: f64,
    #[serde(default)]
    pub shift_pause: PauseLimits,
    /// mJ/slot.
    #[serde(default = "default_allowed_drift")]
    pub allowed_drift: f64,
    #[serde(default)]
    pub drift_mode: DriftMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            strategy: default_strategy(),
            num_slots: default_num_slots(),
            num_ss_slots: None,
            high_danger: default_high_danger(),
            low_danger: default_low_danger(),
            shift_pause: PauseLimits::default(),
            allowed_drift: default_allowed_drift(),
            drift_mode: DriftMode::default(),
            seed: default_seed(),
        }
    }
}

fn default_route() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    /// Initial packets per slot.
    pub rate: u32,
    /// Switch threshold while path 1 is active (mJ).
    pub h1: f64,
    /// Switch threshold while path 2 is active (mJ).
    pub h2: f64,
    #[serde(default = "default_route")]
    pub initial_route: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    /// mJ per slot; above 100 means "read `trace_file`".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harvest: Option<f64>,
    /// Path to a harvest trace, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
    /// Inline harvest trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
    /// Defaults to `b_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_battery: Option<f64>,
    pub b_max: f64,
}

/// The whole config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub topology: TopologySection,
    #[serde(default = "reference_energy")]
    pub energy: RawEnergyParams,
    #[serde(default)]
    pub simulation: SimulationSection,
    pub sources: Vec<SourceSection>,
    pub nodes: Vec<NodeSection>,
}

/// Bit-level parameters used when a config has no `energy` section.
pub fn reference_energy() -> RawEnergyParams {
    RawEnergyParams {
        send_bit_energy: 0.02,
        receive_bit_energy: 0.02,
        data_packet_bits: 1000.0,
        control_packet_bits: 100.0,
        data_header_bits: 100.0,
        control_header_bits: 20.0,
        equiv_detection_bits: 10.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub rate: u32,
    pub h1: f64,
    pub h2: f64,
    pub initial_route: PathSel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub harvest: HarvestSource,
    pub initial_battery: f64,
    pub b_max: f64,
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub description: Option<String>,
    pub topology_section: TopologySection,
    pub topology: Topology,
    pub raw: RawEnergyParams,
    pub costs: EnergyCostModel,
    pub strategy: StrategyParams,
    pub num_slots: u64,
    pub num_ss_slots: u64,
    pub sources: Vec<SourceConfig>,
    pub nodes: Vec<NodeConfig>,
    pub seed: u64,
    /// Notices raised while loading.
    pub warnings: Vec<String>,
}

fn schema_error(e: serde_path_to_error::Error<serde_json::Error>) -> ConfigError {
    let mut field = e.path().to_string();
    let message = e.inner().to_string();
    // Point missing-field errors at the field itself.
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(name) = rest.split('`').next() {
            field = if field == "." { name.to_string() } else { format!("{field}.{name}") };
        }
    }
    ConfigError::Schema { field, message }
}

/// Parses a config document without touching the filesystem.
pub fn parse_config_file(text: &str) -> Result<ConfigFile, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(schema_error)
}

/// Reads, validates and applies defaults. Trace files resolve relative to
/// the config's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
    let file = parse_config_file(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    RunConfig::from_file(file, &base)
}

fn check_nonneg(field: String, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, "must be a finite non-negative number"))
    }
}

fn node_harvest(i: usize, n: &NodeSection, base: &Path, warnings: &mut Vec<String>) -> Result<HarvestSource, ConfigError> {
    let field = |f: &str| format!("nodes[{i}].{f}");
    let legacy = n.harvest.is_some_and(|h| h > LEGACY_TRACE_TRIGGER);
    if let Some(h) = n.harvest {
        check_nonneg(field("harvest"), h)?;
    }
    if let Some(t) = &n.trace {
        if n.trace_file.is_some() {
            return Err(ConfigError::invalid(field("trace"), "give either trace or trace_file, not both"));
        }
        if t.is_empty() {
            return Err(ConfigError::invalid(field("trace"), "trace is empty"));
        }
        for (k, &v) in t.iter().enumerate() {
            check_nonneg(format!("{}[{k}]", field("trace")), v)?;
        }
        if n.harvest.is_some() && !legacy {
            return Err(ConfigError::invalid(field("harvest"), "constant harvest given together with a trace"));
        }
        return Ok(HarvestSource::Trace(t.clone()));
    }
    if let Some(f) = &n.trace_file {
        if n.harvest.is_some() && !legacy {
            return Err(ConfigError::invalid(field("harvest"), "constant harvest given together with trace_file"));
        }
        if legacy {
            warnings.push(format!(
                "node {}: harvest value {} > {LEGACY_TRACE_TRIGGER} read as a request for the trace in {f}",
                i + 1,
                n.harvest.unwrap_or_default()
            ));
        }
        let p: PathBuf = base.join(f);
        let text = std::fs::read_to_string(&p).map_err(|e| ConfigError::io(&p, e))?;
        let trace = HarvestSource::parse_trace(&text)
            .map_err(|m| ConfigError::invalid(field("trace_file"), format!("{}: {m}", p.display())))?;
        return Ok(HarvestSource::Trace(trace));
    }
    match n.harvest {
        Some(_) if legacy => Err(ConfigError::invalid(
            field("harvest"),
            format!("values above {LEGACY_TRACE_TRIGGER} request a trace, but no trace_file is given"),
        )),
        Some(h) => Ok(HarvestSource::Constant(h)),
        None => Err(ConfigError::invalid(field("harvest"), "missing: give harvest, trace or trace_file")),
    }
}

impl RunConfig {
    /// Validates a parsed document and resolves trace files against `base`.
    pub fn from_file(file: ConfigFile, base: &Path) -> Result<RunConfig, ConfigError> {
        let mut warnings = Vec::new();
        let topology = file.topology.build();
        let ns = topology.num_sources();
        let ni = topology.num_intermediates();
        if ns == 0 {
            return Err(ConfigError::invalid("topology.paths", "at least one source is required"));
        }
        let violations = topology.validate();
        if !violations.is_empty() {
            return Err(ConfigError::Topology(violations.iter().map(ToString::to_string).collect()));
        }
        if file.sources.len() != ns {
            return Err(ConfigError::invalid(
                "sources",
                format!("{} entries but topology.paths declares {ns} sources", file.sources.len()),
            ));
        }
        if file.nodes.len() != ni {
            return Err(ConfigError::invalid(
                "nodes",
                format!("{} entries but topology.num_intermediates is {ni}", file.nodes.len()),
            ));
        }
        let costs = derive_costs(&file.energy)?;

        let mut sources = Vec::with_capacity(ns);
        for (i, s) in file.sources.iter().enumerate() {
            let initial_route = PathSel::from_number(s.initial_route)
                .ok_or_else(|| ConfigError::invalid(format!("sources[{i}].initial_route"), "must be 1 or 2"))?;
            sources.push(SourceConfig { rate: s.rate, h1: s.h1, h2: s.h2, initial_route });
        }
        let mut nodes = Vec::with_capacity(ni);
        for (i, n) in file.nodes.iter().enumerate() {
            let harvest = node_harvest(i, n, base, &mut warnings)?;
            nodes.push(NodeConfig { harvest, initial_battery: n.initial_battery.unwrap_or(n.b_max), b_max: n.b_max });
        }

        let sim = &file.simulation;
        let cfg = RunConfig {
            description: file.description.clone(),
            topology_section: file.topology.clone(),
            topology,
            raw: file.energy,
            costs,
            strategy: StrategyParams {
                kind: sim.strategy,
                high_danger: sim.high_danger,
                low_danger: sim.low_danger,
                allowed_drift: sim.allowed_drift,
                pauses: sim.shift_pause,
                drift_mode: sim.drift_mode,
            },
            num_slots: sim.num_slots,
            num_ss_slots: sim.num_ss_slots.unwrap_or(sim.num_slots),
            sources,
            nodes,
            seed: sim.seed,
            warnings,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-checks the numeric invariants, e.g. after a sweep edit.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_ss_slots > self.num_slots {
            return Err(ConfigError::invalid("simulation.num_ss_slots", "exceeds num_slots"));
        }
        let st = &self.strategy;
        check_nonneg("simulation.high_danger".into(), st.high_danger)?;
        check_nonneg("simulation.low_danger".into(), st.low_danger)?;
        check_nonneg("simulation.allowed_drift".into(), st.allowed_drift)?;
        for (i, s) in self.sources.iter().enumerate() {
            check_nonneg(format!("sources[{i}].h1"), s.h1)?;
            check_nonneg(format!("sources[{i}].h2"), s.h2)?;
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.b_max.is_finite() && n.b_max > 0.0) {
                return Err(ConfigError::invalid(format!("nodes[{i}].b_max"), "must be positive"));
            }
            check_nonneg(format!("nodes[{i}].initial_battery"), n.initial_battery)?;
            if n.initial_battery > n.b_max {
                return Err(ConfigError::invalid(format!("nodes[{i}].initial_battery"), "exceeds b_max"));
            }
            if st.kind.is_feedback() {
                let low_top = self.costs.b_min + self.costs.data * st.low_danger;
                if low_top >= 0.9 * n.b_max {
                    return Err(ConfigError::invalid(
                        format!("nodes[{i}].b_max"),
                        format!("low danger zone tops out at {low_top} mJ, not below 0.9·b_max = {}", 0.9 * n.b_max),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn num_sources(&self) -> usize {
        self.topology.num_sources()
    }

    /// The equivalent self-contained document: every default explicit,
    /// traces inlined.
    pub fn manifest(&self) -> ConfigFile {
        ConfigFile {
            description: self.description.clone(),
            topology: self.topology_section.clone(),
            energy: self.raw,
            simulation: SimulationSection {
                strategy: self.strategy.kind,
                num_slots: self.num_slots,
                num_ss_slots: Some(self.num_ss_slots),
                high_danger: self.strategy.high_danger,
                low_danger: self.strategy.low_danger,
                shift_pause: self.strategy.pauses,
                allowed_drift: self.strategy.allowed_drift,
                drift_mode: self.strategy.drift_mode,
                seed: self.seed,
            },
            sources: self
                .sources
                .iter()
                .map(|s| SourceSection { rate: s.rate, h1: s.h1, h2: s.h2, initial_route: s.initial_route.number() })
                .collect(),
            nodes: self
                .nodes
                .iter()
                .map(|n| {
                    let (harvest, trace) = match &n.harvest {
                        HarvestSource::Constant(e) => (Some(*e), None),
                        HarvestSource::Trace(t) => (None, Some(t.clone())),
                    };
                    NodeSection {
                        harvest,
                        trace_file: None,
                        trace,
                        initial_battery: Some(n.initial_battery),
                        b_max: n.b_max,
                    }
                })
                .collect(),
        }
    }

    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Changes the run length; a steady-state window covering the whole
    /// run keeps covering it.
    pub fn set_num_slots(&mut self, n: u64) {
        if self.num_ss_slots == self.num_slots {
            self.num_ss_slots = n;
        }
        self.num_slots = n;
        self.num_ss_slots = self.num_ss_slots.min(n);
    }

    /// Sets every switch threshold of every source.
    pub fn set_all_thresholds(&mut self, h: f64) {
        for s in &mut self.sources {
            s.h1 = h;
            s.h2 = h;
        }
    }

    pub fn set_all_pauses(&mut self, p: u32) {
        self.strategy.pauses = PauseLimits { up: p, down: p, slot: p };
    }

    pub fn set_initial_routing(&mut self, routes: &[PathSel]) {
        for (s, &r) in self.sources.iter_mut().zip(routes) {
            s.initial_route = r;
        }
    }
}
