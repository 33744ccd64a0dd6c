//! The per-slot simulation loop.
//!
//! One slot: mark listening nodes, draw the packet schedule, forward every
//! packet with overhearing charges, collect status messages, let the
//! controller of each source decide, charge the command message, apply the
//! decisions and finally harvest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::energy::{LedgerEntry, LedgerReason, NodeEnergy};
use crate::model::{NodeId, RoutingState};
use crate::stats::{RunStats, SlotRecord};
use crate::strategy::{EvalContext, SourceController, SourceDecision};

/// One packet transmission inside a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketEvent {
    /// Zero-based source index.
    pub source: usize,
    /// In-slot transmission time in `[0, 1)`.
    pub time: f64,
    pub seq: u32,
}

/// Ordered packet events of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSchedule {
    /// One-based slot number.
    pub slot: u64,
    pub events: Vec<PacketEvent>,
}

impl SlotSchedule {
    fn sort(&mut self) {
        self.events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.seq.cmp(&b.seq)));
    }

    pub fn count_for(&self, source: usize) -> usize {
        self.events.iter().filter(|e| e.source == source).count()
    }
}

/// Draws `rates[i]` uniform transmission times for every source `i`.
pub fn generate_schedule<R: Rng + ?Sized>(rates: &[u32], slot: u64, rng: &mut R) -> SlotSchedule {
    let mut events = Vec::with_capacity(rates.iter().map(|&g| g as usize).sum());
    let mut seq = 0;
    for (source, &g) in rates.iter().enumerate() {
        for _ in 0..g {
            events.push(PacketEvent { source, time: rng.random::<f64>(), seq });
            seq += 1;
        }
    }
    let mut s = SlotSchedule { slot, events };
    s.sort();
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardResult {
    Delivered,
    /// Dropped before `node`, the `hop`-th node of the path (one-based).
    DroppedAt { node: NodeId, hop: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FatalCause {
    /// A node could not afford to receive the command message.
    ControlUnaffordable { level: f64, needed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fatal {
    pub slot: u64,
    pub node: NodeId,
    pub cause: FatalCause,
}

impl std::fmt::Display for Fatal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.cause {
            FatalCause::ControlUnaffordable { level, needed } => write!(
                f,
                "slot {}: node {} cannot receive the command message (level {level} mJ < {needed} mJ)",
                self.slot, self.node
            ),
        }
    }
}

/// Opt-in debug streams.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DebugFlags {
    pub switch_times: bool,
    pub strategy: bool,
    pub nonswitch_shift: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub debug: DebugFlags,
    /// Keep an itemized log of every battery movement.
    pub record_ledger: bool,
    /// Recorded schedules to use instead of the generator.
    pub replay: Option<Vec<SlotSchedule>>,
}

#[derive(Debug, Clone, Default)]
pub struct DebugLog {
    pub switch_times: Vec<String>,
    pub strategy: Vec<String>,
    pub nonswitch_shift: Vec<String>,
}

/// Everything one slot produced.
#[derive(Debug, Clone)]
pub struct SlotOutcome {
    pub slot: u64,
    pub schedule: SlotSchedule,
    /// Routing and rates in force during the slot.
    pub routing: RoutingState,
    pub rates: Vec<u32>,
    pub sent: Vec<u32>,
    pub delivered: Vec<u32>,
    pub dropped: Vec<u32>,
    pub decisions: Vec<SourceDecision>,
    pub control_sent: bool,
    pub silent: Vec<NodeId>,
    /// Battery levels at the end of the slot.
    pub levels: Vec<f64>,
}

/// Evolving simulation state.
#[derive(Debug, Clone)]
pub struct EngineState {
    /// Slots completed so far.
    pub slot: u64,
    pub energies: Vec<NodeEnergy>,
    pub routing: RoutingState,
    pub rates: Vec<u32>,
    /// Last level each node managed to report.
    pub reported: Vec<f64>,
    pub prev_reported: Vec<f64>,
    pub controllers: Vec<SourceController>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Warnings {
    /// Configuration-time notices.
    pub config: Vec<String>,
    /// Node-slots where the status message could not be sent.
    pub stale_reports: u64,
    /// Node-slots where the status spend left a node below the control reserve.
    pub status_below_reserve: u64,
    /// −1 shifts requested for a source already at rate 0.
    pub floored_shifts: u64,
}

/// Complete result of a run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub stats: RunStats,
    pub schedules: Vec<SlotSchedule>,
    pub ledger: Vec<LedgerEntry>,
    pub debug: DebugLog,
    pub warnings: Warnings,
    pub fatal: Option<Fatal>,
    /// Routing after the initial verification step.
    pub initial_routing: RoutingState,
}

pub struct Engine<'a> {
    cfg: &'a RunConfig,
    pub state: EngineState,
    rng: ChaCha8Rng,
    options: RunOptions,
    harvest_rates: Vec<f64>,
    b_max: Vec<f64>,
    pub ledger: Vec<LedgerEntry>,
    pub debug: DebugLog,
    pub warnings: Warnings,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: &'a RunConfig, options: RunOptions) -> Self {
        let topo = &cfg.topology;
        let energies: Vec<NodeEnergy> = cfg.nodes.iter().map(|n| NodeEnergy::new(n.initial_battery, n.b_max)).collect();
        let levels: Vec<f64> = energies.iter().map(|e| e.level).collect();
        let controllers = cfg
            .sources
            .iter()
            .enumerate()
            .map(|(s, src)| SourceController::new(topo, s, src.initial_route, src.h1, src.h2))
            .collect::<Vec<_>>();
        let mut warnings = Warnings { config: cfg.warnings.clone(), ..Default::default() };
        for (s, c) in controllers.iter().enumerate() {
            if !c.switching_enabled() {
                warnings
                    .config
                    .push(format!("source {}: a path lies entirely in the omit set; switching disabled", s + 1));
            }
        }
        let state = EngineState {
            slot: 0,
            routing: RoutingState(cfg.sources.iter().map(|s| s.initial_route).collect()),
            rates: cfg.sources.iter().map(|s| s.rate).collect(),
            reported: levels.clone(),
            prev_reported: levels,
            energies,
            controllers,
        };
        Engine {
            cfg,
            state,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            options,
            harvest_rates: vec![0.0; cfg.nodes.len()],
            b_max: cfg.nodes.iter().map(|n| n.b_max).collect(),
            ledger: Vec::new(),
            debug: DebugLog::default(),
            warnings,
        }
    }

    fn log(&mut self, node: NodeId, reason: LedgerReason, amount: f64) {
        if self.options.record_ledger {
            self.ledger.push(LedgerEntry { slot: self.state.slot + 1, node, reason, amount });
        }
    }

    fn spend(&mut self, node: NodeId, amount: f64, floor: f64, reason: LedgerReason) -> bool {
        let ok = self.state.energies[node.idx()].try_spend(amount, floor);
        if ok {
            self.log(node, reason, amount);
        }
        ok
    }

    /// Applies the switch rule once per source at zero cost, using the
    /// initial battery levels.
    pub fn verify_initial_routing(&mut self) -> RoutingState {
        let topo = &self.cfg.topology;
        let levels: Vec<f64> = self.state.energies.iter().map(|e| e.level).collect();
        for (s, c) in self.state.controllers.iter_mut().enumerate() {
            if c.wants_switch(topo, s, &levels) {
                c.active = c.active.other();
            }
        }
        self.state.routing = RoutingState(self.state.controllers.iter().map(|c| c.active).collect());
        self.state.routing.clone()
    }

    /// Forwards one packet along its source's active path.
    pub fn forward_packet(&mut self, ev: &PacketEvent, listening: &[bool]) -> ForwardResult {
        let cfg = self.cfg;
        let topo = &cfg.topology;
        let costs = &cfg.costs;
        let path = topo.path(ev.source, self.state.routing.0[ev.source]);
        for &v in topo.source_neighbors(ev.source) {
            if listening[v.idx()] && v != path[0] {
                self.spend(v, costs.data_header_rx, costs.b_min, LedgerReason::Overhear);
            }
        }
        for (i, &u) in path.iter().enumerate() {
            if !self.spend(u, costs.data, costs.b_min, LedgerReason::Data) {
                return ForwardResult::DroppedAt { node: u, hop: i + 1 };
            }
            let next = path.get(i + 1).copied();
            for &v in topo.node_neighbors(u) {
                if listening[v.idx()] && Some(v) != next {
                    self.spend(v, costs.data_header_rx, costs.b_min, LedgerReason::Overhear);
                }
            }
        }
        ForwardResult::Delivered
    }

    /// Every node able to afford it sends its status. Returns the nodes
    /// that stayed silent; their last report is kept.
    pub fn end_of_slot_status(&mut self) -> Vec<NodeId> {
        let ct = self.cfg.costs.control_tx;
        let b_min = self.cfg.costs.b_min;
        let mut silent = Vec::new();
        for i in 0..self.state.energies.len() {
            let node = NodeId::from_idx(i);
            if self.state.energies[i].spend_if_affordable(ct) {
                self.log(node, LedgerReason::Status, ct);
                let level = self.state.energies[i].level;
                self.state.reported[i] = level;
                if level < b_min {
                    self.warnings.status_below_reserve += 1;
                }
            } else {
                silent.push(node);
            }
        }
        self.warnings.stale_reports += silent.len() as u64;
        silent
    }

    /// Charges the command message to every node when a decision was made.
    pub fn apply_control(&mut self, any_decision: bool) -> Result<(), Fatal> {
        if !any_decision {
            return Ok(());
        }
        let cr = self.cfg.costs.control_rx;
        if let Some(i) = self.state.energies.iter().position(|e| e.level < cr) {
            return Err(Fatal {
                slot: self.state.slot + 1,
                node: NodeId::from_idx(i),
                cause: FatalCause::ControlUnaffordable { level: self.state.energies[i].level, needed: cr },
            });
        }
        for i in 0..self.state.energies.len() {
            self.state.energies[i].spend_if_affordable(cr);
            self.log(NodeId::from_idx(i), LedgerReason::Control, cr);
        }
        Ok(())
    }

    fn replay_schedule(&mut self, slot: u64, recorded: &SlotSchedule) -> SlotSchedule {
        let mut events = Vec::new();
        let mut seq = 0u32;
        for (s, &g) in self.state.rates.iter().enumerate() {
            let mine: Vec<&PacketEvent> = recorded.events.iter().filter(|e| e.source == s).collect();
            for k in 0..g as usize {
                let time = match mine.get(k) {
                    Some(e) => e.time,
                    None => self.rng.random::<f64>(),
                };
                events.push(PacketEvent { source: s, time, seq: 0 });
            }
        }
        // Keep the recorded processing order for recorded events.
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.source.cmp(&b.source)));
        for e in &mut events {
            e.seq = seq;
            seq += 1;
        }
        SlotSchedule { slot, events }
    }

    fn harvest_at(&self, node: usize, slot: u64) -> f64 {
        self.cfg.nodes[node].harvest.at(slot - 1)
    }

    /// Runs one slot. `replay` replaces the generated schedule.
    pub fn run_slot(&mut self, replay: Option<&SlotSchedule>) -> Result<SlotOutcome, Fatal> {
        let cfg = self.cfg;
        let topo = &cfg.topology;
        let slot = self.state.slot + 1;
        let ns = topo.num_sources();

        let listening = topo.listening_mask(&self.state.routing);
        let schedule = match replay {
            Some(r) => self.replay_schedule(slot, r),
            None => generate_schedule(&self.state.rates, slot, &mut self.rng),
        };

        let mut sent = vec![0u32; ns];
        let mut delivered = vec![0u32; ns];
        let mut dropped = vec![0u32; ns];
        for ev in &schedule.events {
            sent[ev.source] += 1;
            match self.forward_packet(ev, &listening) {
                ForwardResult::Delivered => delivered[ev.source] += 1,
                ForwardResult::DroppedAt { .. } => dropped[ev.source] += 1,
            }
        }

        let silent = self.end_of_slot_status();

        let routing_during = self.state.routing.clone();
        let rates_during = self.state.rates.clone();
        let mut decisions = Vec::with_capacity(ns);
        for s in 0..ns {
            let ctx = EvalContext {
                slot,
                source: s,
                rate: self.state.rates[s],
                topology: topo,
                costs: &cfg.costs,
                params: &cfg.strategy,
                reported: &self.state.reported,
                prev_reported: &self.state.prev_reported,
                b_max: &self.b_max,
            };
            let d = self.state.controllers[s].evaluate(&ctx);
            if d.floored {
                self.warnings.floored_shifts += 1;
            }
            decisions.push(d);
        }
        let any = decisions.iter().any(SourceDecision::is_decision);
        self.apply_control(any)?;

        for (s, d) in decisions.iter().enumerate() {
            self.state.routing.0[s] = d.active;
            let r = &mut self.state.rates[s];
            *r = (*r as i64 + d.shift as i64).max(0) as u32;
        }

        for i in 0..self.state.energies.len() {
            let e = self.harvest_at(i, slot);
            self.harvest_rates[i] = e;
            self.state.energies[i].harvest(e);
            self.log(NodeId::from_idx(i), LedgerReason::Harvest, e);
        }

        self.state.prev_reported.clone_from(&self.state.reported);
        self.state.slot = slot;
        let levels: Vec<f64> = self.state.energies.iter().map(|e| e.level).collect();

        let outcome = SlotOutcome {
            slot,
            schedule,
            routing: routing_during,
            rates: rates_during,
            sent,
            delivered,
            dropped,
            decisions,
            control_sent: any,
            silent,
            levels,
        };
        self.debug_lines(&outcome);
        Ok(outcome)
    }

    fn state_line(&self, slot: u64, levels: &[f64]) -> String {
        format!(
            "slot {slot}: routing {} rates {:?} harvest {:?} levels {:?}",
            self.state.routing, self.state.rates, self.harvest_rates, levels
        )
    }

    fn debug_lines(&mut self, o: &SlotOutcome) {
        let flags = self.options.debug;
        if flags.switch_times && o.decisions.iter().any(|d| d.switched) {
            let line = self.state_line(o.slot, &o.levels);
            self.debug.switch_times.push(line);
        }
        if !(flags.strategy || flags.nonswitch_shift) || !self.cfg.strategy.kind.is_feedback() {
            return;
        }
        let topo = &self.cfg.topology;
        let users = |n: Option<NodeId>| -> usize {
            n.map_or(0, |n| topo.paths().iter().filter(|p| p[0].contains(&n) || p[1].contains(&n)).count())
        };
        for (s, d) in o.decisions.iter().enumerate() {
            let new_rate = self.state.rates[s];
            if d.at_switch && flags.strategy {
                if d.proposed.value != 0 || d.proposed.reason == crate::strategy::ShiftReason::LowDangerBlock {
                    let mut line = format!(
                        "slot {} source {}: {} shift {:+}",
                        o.slot,
                        s + 1,
                        d.proposed.reason,
                        d.proposed.value
                    );
                    if let Some(b) = d.back.filter(|_| d.proposed.reason == crate::strategy::ShiftReason::BackShift) {
                        line.push_str(&format!(
                            " users(current min-node) {} users(previous min-node) {} drift {:.6e}",
                            users(d.critical.map(|c| c.0)),
                            users(d.prev_critical),
                            b.drift
                        ));
                        if self.cfg.strategy.kind == crate::strategy::StrategyKind::Estimate {
                            line.push_str(&format!(" delta/4 {:.6e}", b.threshold));
                        }
                    }
                    if let Some((n, l)) = d.critical {
                        line.push_str(&format!(" min-node {n} level {l}"));
                    }
                    if d.proposed.reason == crate::strategy::ShiftReason::LowDangerBlock {
                        line.push_str(" (+1 reduced to 0 by low danger zone)");
                    }
                    if d.paused {
                        line.push_str(" (prevented by shift pause)");
                    }
                    self.debug.strategy.push(line);
                }
                if d.shift != 0 {
                    self.debug.strategy.push(format!(
                        "slot {} source {}: shift {:+} executed, new rate {new_rate}",
                        o.slot,
                        s + 1,
                        d.shift
                    ));
                }
            } else if !d.at_switch && flags.nonswitch_shift && d.shift != 0 {
                self.debug.nonswitch_shift.push(format!(
                    "slot {} source {}: non-switch {} shift {:+}, new rate {new_rate}",
                    o.slot,
                    s + 1,
                    d.proposed.reason,
                    d.shift
                ));
            }
        }
    }

    /// Runs the configured number of slots, or until a fatal condition.
    pub fn run(mut self) -> RunResult {
        let initial_routing = self.verify_initial_routing();
        if self.options.debug.switch_times {
            let levels: Vec<f64> = self.state.energies.iter().map(|e| e.level).collect();
            for i in 0..self.harvest_rates.len() {
                self.harvest_rates[i] = self.harvest_at(i, 1);
            }
            let line = self.state_line(1, &levels);
            self.debug.switch_times.push(line);
        }
        let mut stats = RunStats::new(self.cfg.topology.num_sources(), self.cfg.topology.num_intermediates());
        let mut schedules = Vec::with_capacity(self.cfg.num_slots as usize);
        let replay = self.options.replay.take();
        let mut fatal = None;
        for k in 0..self.cfg.num_slots {
            let rec = replay.as_ref().map(|r| &r[k as usize]);
            match self.run_slot(rec) {
                Ok(o) => {
                    stats.record_slot(SlotRecord::from_outcome(&o));
                    schedules.push(o.schedule);
                }
                Err(f) => {
                    stats.fatal = Some(f);
                    fatal = Some(f);
                    break;
                }
            }
        }
        RunResult {
            stats,
            schedules,
            ledger: self.ledger,
            debug: self.debug,
            warnings: self.warnings,
            fatal,
            initial_routing,
        }
    }
}

/// Convenience wrapper: build an engine and run it.
pub fn run(cfg: &RunConfig, options: RunOptions) -> RunResult {
    Engine::new(cfg, options).run()
}
