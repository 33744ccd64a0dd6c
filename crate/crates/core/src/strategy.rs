//! Destination-side control: hysteresis path switching, danger zones,
//! drift measurement and the input-shift rules of the three strategies.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyCostModel;
use crate::model::{min_on_path, NodeId, PathSel, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "no-feedback")]
    NoFeedback,
    #[serde(rename = "fwdz")]
    FeedbackWithDangerZones,
    #[serde(rename = "estimate")]
    Estimate,
}

impl StrategyKind {
    pub fn is_feedback(self) -> bool {
        !matches!(self, StrategyKind::NoFeedback)
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::NoFeedback => "no-feedback",
            StrategyKind::FeedbackWithDangerZones => "fwdz",
            StrategyKind::Estimate => "estimate",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no-feedback" | "nofeedback" => Ok(StrategyKind::NoFeedback),
            "fwdz" | "feedback" => Ok(StrategyKind::FeedbackWithDangerZones),
            "estimate" => Ok(StrategyKind::Estimate),
            other => Err(format!("unknown strategy {other:?} (expected no-feedback, fwdz or estimate)")),
        }
    }
}

/// How the per-slot drift is measured over a cycle window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Average of both paths' critical-node changes.
    #[default]
    BothPaths,
    /// Critical-node change of the path that was active when the window closed.
    ActivePath,
}

/// Battery band of a critical node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    HighDanger,
    LowDanger,
    BmaxZone,
    Normal,
}

/// Band membership, checked from the bottom up.
pub fn classify_zone(level: f64, costs: &EnergyCostModel, b_max: f64, high_danger: f64, low_danger: f64) -> Zone {
    if level < costs.b_min + costs.data * high_danger {
        Zone::HighDanger
    } else if level < costs.b_min + costs.data * low_danger {
        Zone::LowDanger
    } else if level > 0.9 * b_max {
        Zone::BmaxZone
    } else {
        Zone::Normal
    }
}

/// HDR rule: leave the active path once the inactive critical node is
/// more than `h_current` above the active one.
#[inline]
pub fn decide_switch(min_active: f64, min_inactive: f64, h_current: f64) -> bool {
    min_inactive - min_active > h_current
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftReason {
    HighDanger,
    LowDangerBlock,
    BmaxZone,
    BackShift,
    OmitDown,
    None,
}

impl fmt::Display for ShiftReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ShiftReason::HighDanger => "b_min",
            ShiftReason::LowDangerBlock => "low-danger-block",
            ShiftReason::BmaxZone => "b_max",
            ShiftReason::BackShift => "back",
            ShiftReason::OmitDown => "omit",
            ShiftReason::None => "none",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftDecision {
    pub value: i8,
    pub reason: ShiftReason,
}

impl ShiftDecision {
    pub const NONE: ShiftDecision = ShiftDecision { value: 0, reason: ShiftReason::None };

    pub fn new(value: i8, reason: ShiftReason) -> Self {
        ShiftDecision { value, reason }
    }
}

/// Critical-node readings taken at a switch event.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Snapshot {
    slot: u64,
    min: [f64; 2],
    node: [Option<NodeId>; 2],
    active: [u64; 2],
}

/// The span covering the last two switch intervals, closed at the current
/// switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleWindow {
    /// Slots in the window (I).
    pub len: u64,
    /// Slots each path was active (I1, I2).
    pub on_path: [u64; 2],
    /// Critical-node level at window open, per path.
    pub start: [f64; 2],
    /// Critical-node level now, per path.
    pub end: [f64; 2],
    /// Whether the current critical node is the last node of its path.
    pub cn_last: [bool; 2],
    /// Path active during the slot that closed the window.
    pub active: PathSel,
    /// Critical nodes at window open (debug only).
    pub start_nodes: [Option<NodeId>; 2],
}

/// Tracks per-path activity and switch-time critical-node readings.
#[derive(Debug, Clone, Default)]
pub struct CycleTracker {
    active: [u64; 2],
    history: VecDeque<Snapshot>,
}

impl CycleTracker {
    /// Counts one slot on `path`.
    pub fn tick(&mut self, path: PathSel) {
        self.active[path.idx()] += 1;
    }

    /// Window closing at `slot`, if two earlier switch events exist.
    pub fn window(&self, slot: u64, end: [f64; 2], cn_last: [bool; 2], active: PathSel) -> Option<CycleWindow> {
        if self.history.len() < 2 {
            return None;
        }
        let open = self.history[0];
        let len = slot - open.slot;
        if len == 0 {
            return None;
        }
        Some(CycleWindow {
            len,
            on_path: [self.active[0] - open.active[0], self.active[1] - open.active[1]],
            start: open.min,
            end,
            cn_last,
            active,
            start_nodes: open.node,
        })
    }

    /// Records a switch event.
    pub fn record(&mut self, slot: u64, min: [f64; 2], node: [Option<NodeId>; 2]) {
        if self.history.len() == 2 {
            self.history.pop_front();
        }
        self.history.push_back(Snapshot { slot, min, node, active: self.active });
    }

    pub fn switch_events(&self) -> usize {
        self.history.len()
    }
}

/// Average per-slot drift over a window.
pub fn compute_drift(w: &CycleWindow, mode: DriftMode) -> f64 {
    let len = w.len as f64;
    match mode {
        DriftMode::BothPaths => ((w.end[0] - w.start[0]) + (w.end[1] - w.start[1])) / (2.0 * len),
        DriftMode::ActivePath => {
            let i = w.active.idx();
            (w.end[i] - w.start[i]) / len
        }
    }
}

/// Predicted per-cycle saving of a −1 input shift.
pub fn estimate_delta(costs: &EnergyCostModel, len: u64, on_path1: u64, on_path2: u64, cn1_is_last: bool, cn2_is_last: bool) -> f64 {
    let ind = |last: bool| if last { 0.0 } else { 1.0 };
    costs.data * len as f64
        + (on_path1 as f64 * ind(cn1_is_last) + on_path2 as f64 * ind(cn2_is_last)) * costs.data_header_rx
}

/// Drift-driven shift direction.
pub fn back_shift(kind: StrategyKind, s: f64, len: u64, delta: f64, allowed_drift: f64) -> i8 {
    match kind {
        StrategyKind::NoFeedback => 0,
        StrategyKind::Estimate => {
            let total = len as f64 * s;
            if total > delta / 4.0 {
                1
            } else if total < -delta / 4.0 {
                -1
            } else {
                0
            }
        }
        StrategyKind::FeedbackWithDangerZones => {
            if s > allowed_drift {
                1
            } else if s < -allowed_drift {
                -1
            } else {
                0
            }
        }
    }
}

/// Drift figures behind a back-shift evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackShiftInfo {
    pub drift: f64,
    /// δ/4 for Estimate, the allowed drift for FWDZ.
    pub threshold: f64,
    pub len: u64,
}

/// Shift decided alongside a path switch. Rules apply in order: high
/// danger forces −1, low danger blocks +1, a full inactive path invites
/// +1, otherwise the drift decides.
pub fn decide_at_switch(
    kind: StrategyKind,
    lowest: Zone,
    inactive: Zone,
    back: Option<(i8, BackShiftInfo)>,
) -> ShiftDecision {
    if !kind.is_feedback() {
        return ShiftDecision::NONE;
    }
    if lowest == Zone::HighDanger {
        return ShiftDecision::new(-1, ShiftReason::HighDanger);
    }
    let low = lowest == Zone::LowDanger;
    let (value, reason) = if inactive == Zone::BmaxZone {
        (1, ShiftReason::BmaxZone)
    } else {
        match back {
            Some((v, _)) => (v, ShiftReason::BackShift),
            None => return ShiftDecision::NONE,
        }
    };
    if value > 0 && low {
        ShiftDecision::new(0, ShiftReason::LowDangerBlock)
    } else {
        ShiftDecision::new(value, reason)
    }
}

/// Shift when the source keeps its path: +1 when the active path is full
/// and no active node lost energy since the previous slot, else −1 when an
/// omitted (shared) bottleneck node is in high danger.
pub fn decide_nonswitch(active_min_zone: Zone, now: &[f64], prev: &[f64], omit_min_zone: Option<Zone>) -> ShiftDecision {
    let rising = now.iter().zip(prev).all(|(n, p)| n >= p);
    if active_min_zone == Zone::BmaxZone && rising {
        ShiftDecision::new(1, ShiftReason::BmaxZone)
    } else if omit_min_zone == Some(Zone::HighDanger) {
        ShiftDecision::new(-1, ShiftReason::OmitDown)
    } else {
        ShiftDecision::NONE
    }
}

/// Maximum pause lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauseLimits {
    /// Switches to wait after a +1 before another switch-time +1.
    pub up: u32,
    /// Switches to wait after a −1 before another switch-time −1.
    pub down: u32,
    /// Slots to wait after any shift.
    pub slot: u32,
}

impl Default for PauseLimits {
    fn default() -> Self {
        PauseLimits { up: 5, down: 2, slot: 3 }
    }
}

/// Remaining pause counters of one source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ShiftPauses {
    pub up: u32,
    pub down: u32,
    pub slot: u32,
}

impl ShiftPauses {
    /// Advances the counters by one slot, and by one switch when `switched`.
    pub fn tick(&mut self, switched: bool) {
        self.slot = self.slot.saturating_sub(1);
        if switched {
            self.up = self.up.saturating_sub(1);
            self.down = self.down.saturating_sub(1);
        }
    }

    /// Whether `d` may execute. Switch-counted pauses only gate switch-time
    /// shifts; the slot pause gates every shift.
    pub fn allows(&self, d: ShiftDecision, at_switch: bool) -> bool {
        match d.value {
            0 => true,
            v => {
                if self.slot > 0 {
                    return false;
                }
                if !at_switch {
                    return true;
                }
                if v > 0 {
                    self.up == 0
                } else {
                    self.down == 0
                }
            }
        }
    }

    /// Restarts the pauses after an executed shift.
    pub fn restart(&mut self, value: i8, limits: &PauseLimits) {
        if value > 0 {
            self.up = limits.up;
        } else if value < 0 {
            self.down = limits.down;
        }
        if value != 0 {
            self.slot = limits.slot;
        }
    }
}

/// Applies the pause gate. Returns the decision to execute and whether a
/// non-zero proposal was suppressed.
pub fn gate_by_pause(d: ShiftDecision, pauses: &mut ShiftPauses, limits: &PauseLimits, at_switch: bool) -> (ShiftDecision, bool) {
    if d.value == 0 {
        return (d, false);
    }
    if pauses.allows(d, at_switch) {
        pauses.restart(d.value, limits);
        (d, false)
    } else {
        (ShiftDecision::new(0, d.reason), true)
    }
}

/// Strategy-wide parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyParams {
    pub kind: StrategyKind,
    pub high_danger: f64,
    pub low_danger: f64,
    pub allowed_drift: f64,
    pub pauses: PauseLimits,
    pub drift_mode: DriftMode,
}

/// Everything the controller reads at the end of a slot.
pub struct EvalContext<'a> {
    pub slot: u64,
    pub source: usize,
    pub rate: u32,
    pub topology: &'a Topology,
    pub costs: &'a EnergyCostModel,
    pub params: &'a StrategyParams,
    pub reported: &'a [f64],
    pub prev_reported: &'a [f64],
    pub b_max: &'a [f64],
}

/// Outcome of one source's end-of-slot evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDecision {
    pub switched: bool,
    /// Path active after the decision.
    pub active: PathSel,
    /// Proposal before pause gating.
    pub proposed: ShiftDecision,
    /// Executed change to the rate (after pauses and the zero floor).
    pub shift: i8,
    pub paused: bool,
    pub at_switch: bool,
    pub back: Option<BackShiftInfo>,
    /// Critical node used for the zone tests, with its level.
    pub critical: Option<(NodeId, f64)>,
    /// Critical node at the window open, when a back shift was evaluated.
    pub prev_critical: Option<NodeId>,
    /// A −1 was requested at rate 0.
    pub floored: bool,
}

impl SourceDecision {
    pub fn is_decision(&self) -> bool {
        self.switched || self.shift != 0
    }
}

/// Per-source destination-side controller.
#[derive(Debug, Clone)]
pub struct SourceController {
    pub active: PathSel,
    /// Threshold to leave path 1 and path 2 respectively.
    pub h: [f64; 2],
    pub pauses: ShiftPauses,
    pub cycle: CycleTracker,
    pub switch_count: u64,
    omit: BTreeSet<NodeId>,
    /// False when one of the paths has no node outside the omit set.
    switching_enabled: bool,
}

impl SourceController {
    pub fn new(topology: &Topology, source: usize, initial: PathSel, h1: f64, h2: f64) -> Self {
        let omit = topology.omit_set(source);
        let enabled = [PathSel::One, PathSel::Two]
            .iter()
            .all(|&p| topology.path(source, p).iter().any(|n| !omit.contains(n)));
        SourceController {
            active: initial,
            h: [h1, h2],
            pauses: ShiftPauses::default(),
            cycle: CycleTracker::default(),
            switch_count: 0,
            omit,
            switching_enabled: enabled,
        }
    }

    pub fn switching_enabled(&self) -> bool {
        self.switching_enabled
    }

    pub fn omit(&self) -> &BTreeSet<NodeId> {
        &self.omit
    }

    fn minima(&self, topology: &Topology, source: usize, levels: &[f64]) -> [Option<(NodeId, f64)>; 2] {
        [PathSel::One, PathSel::Two].map(|p| min_on_path(levels, topology.path(source, p), &self.omit))
    }

    /// Switch rule alone, used to settle the initial routing.
    pub fn wants_switch(&self, topology: &Topology, source: usize, levels: &[f64]) -> bool {
        if !self.switching_enabled {
            return false;
        }
        let m = self.minima(topology, source, levels);
        match (m[self.active.idx()], m[self.active.other().idx()]) {
            (Some((_, a)), Some((_, i))) => decide_switch(a, i, self.h[self.active.idx()]),
            _ => false,
        }
    }

    /// Full end-of-slot evaluation; updates routing, pauses and the cycle
    /// tracker in place.
    pub fn evaluate(&mut self, ctx: &EvalContext<'_>) -> SourceDecision {
        let kind = ctx.params.kind;
        let topo = ctx.topology;
        let s = ctx.source;
        let active = self.active;
        self.cycle.tick(active);

        let minima = self.minima(topo, s, ctx.reported);
        let switched = match (minima[active.idx()], minima[active.other().idx()]) {
            (Some((_, a)), Some((_, i))) if self.switching_enabled => decide_switch(a, i, self.h[active.idx()]),
            _ => false,
        };
        self.pauses.tick(switched);

        let zone_of = |(n, l): (NodeId, f64)| {
            classify_zone(l, ctx.costs, ctx.b_max[n.idx()], ctx.params.high_danger, ctx.params.low_danger)
        };

        let mut back = None;
        let mut prev_critical = None;
        let mut critical = minima[active.idx()];
        let proposed = if !kind.is_feedback() {
            ShiftDecision::NONE
        } else if switched {
            let (act, ina) = (minima[active.idx()].unwrap(), minima[active.other().idx()].unwrap());
            let lowest = if ina.1 < act.1 { ina } else { act };
            critical = Some(lowest);
            let end = [minima[0].unwrap().1, minima[1].unwrap().1];
            let cn_last = [PathSel::One, PathSel::Two].map(|p| {
                let path = topo.path(s, p);
                minima[p.idx()].map(|(n, _)| path.last() == Some(&n)).unwrap_or(false)
            });
            let b = self.cycle.window(ctx.slot, end, cn_last, active).map(|w| {
                let drift = compute_drift(&w, ctx.params.drift_mode);
                let delta = estimate_delta(ctx.costs, w.len, w.on_path[0], w.on_path[1], w.cn_last[0], w.cn_last[1]);
                let threshold = match kind {
                    StrategyKind::Estimate => delta / 4.0 / w.len as f64,
                    _ => ctx.params.allowed_drift,
                };
                let dir = back_shift(kind, drift, w.len, delta, ctx.params.allowed_drift);
                prev_critical = w.start_nodes[active.idx()];
                (dir, BackShiftInfo { drift, threshold, len: w.len })
            });
            back = b.map(|(_, i)| i);
            decide_at_switch(kind, zone_of(lowest), zone_of(ina), b)
        } else {
            let path = topo.path(s, active);
            let now: Vec<f64> = path.iter().map(|n| ctx.reported[n.idx()]).collect();
            let prev: Vec<f64> = path.iter().map(|n| ctx.prev_reported[n.idx()]).collect();
            let active_zone = minima[active.idx()].map(zone_of).unwrap_or(Zone::Normal);
            let omit_min = min_on_path(ctx.reported, &self.omit.iter().copied().collect::<Vec<_>>(), &BTreeSet::new());
            decide_nonswitch(active_zone, &now, &prev, omit_min.map(zone_of))
        };

        let mut floored = false;
        let (gated, paused) = if proposed.value < 0 && ctx.rate == 0 {
            floored = true;
            (ShiftDecision::new(0, proposed.reason), false)
        } else {
            gate_by_pause(proposed, &mut self.pauses, &ctx.params.pauses, switched)
        };

        if switched {
            let min = [minima[0].map_or(0.0, |m| m.1), minima[1].map_or(0.0, |m| m.1)];
            let node = [minima[0].map(|m| m.0), minima[1].map(|m| m.0)];
            self.cycle.record(ctx.slot, min, node);
            self.active = active.other();
            self.switch_count += 1;
        }

        SourceDecision {
            switched,
            active: self.active,
            proposed,
            shift: gated.value,
            paused,
            at_switch: switched,
            back,
            critical,
            prev_critical,
            floored,
        }
    }
}
