//! Run statistics, traces and the analytic sustainable-rate bound.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::energy::EnergyCostModel;
use crate::engine::{Fatal, SlotOutcome};
use crate::model::Topology;

/// Per-slot digest kept for traces and steady-state windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub levels: Vec<f64>,
    pub rates: Vec<u32>,
    /// Active path numbers during the slot.
    pub routing: Vec<u8>,
    pub sent: Vec<u32>,
    pub delivered: Vec<u32>,
    pub dropped: Vec<u32>,
    pub switched: Vec<bool>,
}

impl SlotRecord {
    pub fn from_outcome(o: &SlotOutcome) -> Self {
        SlotRecord {
            slot: o.slot,
            levels: o.levels.clone(),
            rates: o.rates.clone(),
            routing: o.routing.numbers(),
            sent: o.sent.clone(),
            delivered: o.delivered.clone(),
            dropped: o.dropped.clone(),
            switched: o.decisions.iter().map(|d| d.switched).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub sent: Vec<u64>,
    pub delivered: Vec<u64>,
    pub dropped: Vec<u64>,
    pub switches: Vec<u64>,
    pub routing_hist: BTreeMap<Vec<u8>, u64>,
    pub fatal: Option<Fatal>,
    pub total_slots: u64,
    pub num_intermediates: usize,
    /// One row per executed slot.
    pub trace: Vec<SlotRecord>,
}

impl RunStats {
    pub fn new(num_sources: usize, num_intermediates: usize) -> Self {
        RunStats {
            sent: vec![0; num_sources],
            delivered: vec![0; num_sources],
            dropped: vec![0; num_sources],
            switches: vec![0; num_sources],
            routing_hist: BTreeMap::new(),
            fatal: None,
            total_slots: 0,
            num_intermediates,
            trace: Vec::new(),
        }
    }

    pub fn record_slot(&mut self, rec: SlotRecord) {
        for s in 0..self.sent.len() {
            self.sent[s] += rec.sent[s] as u64;
            self.delivered[s] += rec.delivered[s] as u64;
            self.dropped[s] += rec.dropped[s] as u64;
            self.switches[s] += rec.switched[s] as u64;
        }
        *self.routing_hist.entry(rec.routing.clone()).or_default() += 1;
        self.total_slots += 1;
        self.trace.push(rec);
    }

    /// Summary over the whole run plus the final `num_ss_slots` slots.
    pub fn finalize(&self, num_ss_slots: u64) -> Report {
        let mut report = Summary::over(&self.trace, self.sent.len());
        debug_assert_eq!(report.sent, self.sent);
        report.slots = self.total_slots;
        let ss_len = num_ss_slots.min(self.total_slots) as usize;
        let steady = Summary::over(&self.trace[self.trace.len() - ss_len..], self.sent.len());
        Report { summary: report, fatal: self.fatal, steady_state: steady }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingFraction {
    pub state: Vec<u8>,
    pub slots: u64,
    pub fraction: f64,
}

/// Aggregates over a run, or any contiguous window of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub slots: u64,
    pub sent: Vec<u64>,
    pub delivered: Vec<u64>,
    pub dropped: Vec<u64>,
    pub switches: Vec<u64>,
    pub total_sent: u64,
    pub total_delivered: u64,
    pub total_dropped: u64,
    pub total_switches: u64,
    pub throughput_per_slot: f64,
    pub dropped_per_slot: f64,
    pub routing_fractions: Vec<RoutingFraction>,
}

impl Summary {
    pub fn over(rows: &[SlotRecord], num_sources: usize) -> Summary {
        let mut sent = vec![0u64; num_sources];
        let mut delivered = vec![0u64; num_sources];
        let mut dropped = vec![0u64; num_sources];
        let mut switches = vec![0u64; num_sources];
        let mut hist: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
        for r in rows {
            for s in 0..num_sources {
                sent[s] += r.sent[s] as u64;
                delivered[s] += r.delivered[s] as u64;
                dropped[s] += r.dropped[s] as u64;
                switches[s] += r.switched[s] as u64;
            }
            *hist.entry(r.routing.clone()).or_default() += 1;
        }
        let slots = rows.len() as u64;
        let per_slot = |x: u64| if slots == 0 { 0.0 } else { x as f64 / slots as f64 };
        let total_delivered = delivered.iter().sum();
        let total_dropped = dropped.iter().sum();
        Summary {
            slots,
            total_sent: sent.iter().sum(),
            total_delivered,
            total_dropped,
            total_switches: switches.iter().sum(),
            throughput_per_slot: per_slot(total_delivered),
            dropped_per_slot: per_slot(total_dropped),
            routing_fractions: hist
                .into_iter()
                .map(|(state, n)| RoutingFraction { state, slots: n, fraction: per_slot(n) })
                .collect(),
            sent,
            delivered,
            dropped,
            switches,
        }
    }

    /// Occupancy of `state`, zero when never visited.
    pub fn fraction_of(&self, state: &[u8]) -> f64 {
        self.routing_fractions.iter().find(|f| f.state == state).map_or(0.0, |f| f.fraction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    #[serde(flatten)]
    pub summary: Summary,
    pub fatal: Option<Fatal>,
    pub steady_state: Summary,
}

impl Report {
    /// Human-readable block for the terminal.
    pub fn render(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let list = |v: &[u64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        out.push_str(&format!("slots simulated:        {}\n", s.slots));
        out.push_str(&format!("packets sent:           [{}]\n", list(&s.sent)));
        out.push_str(&format!("packets at destination: [{}]\n", list(&s.delivered)));
        out.push_str(&format!("packets lost:           [{}]\n", list(&s.dropped)));
        out.push_str(&format!("path switches:          [{}]\n", list(&s.switches)));
        out.push_str(&format!("throughput per slot:    {:.4}\n", s.throughput_per_slot));
        out.push_str(&format!("lost per slot:          {:.4}\n", s.dropped_per_slot));
        out.push_str("routing state statistics:\n");
        for f in &s.routing_fractions {
            let st = f.state.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
            out.push_str(&format!("  [{st}]: {:.4}\n", f.fraction));
        }
        if let Some(f) = &self.fatal {
            out.push_str(&format!("FATAL: {f}\n"));
        }
        out
    }
}

/// Error from [`sustainable_rate_diamond`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("sustainable-rate bound needs a one-source diamond with two single-node paths")]
pub struct NotDiamond;

/// Largest integer rate a symmetric diamond sustains: each node is active
/// half the time, reports every slot and is charged one command per slot.
pub fn sustainable_rate_diamond(topology: &Topology, costs: &EnergyCostModel, harvest: f64) -> Result<u32, NotDiamond> {
    if !topology.is_diamond() {
        return Err(NotDiamond);
    }
    Ok(sustainable_rate(costs, harvest))
}

/// The bound itself, `floor(2 (e − C_t − C_r) / D)`.
pub fn sustainable_rate(costs: &EnergyCostModel, harvest: f64) -> u32 {
    let surplus = harvest - costs.control_tx - costs.control_rx;
    if surplus <= 0.0 || costs.data <= 0.0 {
        return 0;
    }
    (2.0 * surplus / costs.data).floor() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Endpoint, NodeId};

    fn rec(slot: u64, routing: u8, sent: u32, delivered: u32, switched: bool) -> SlotRecord {
        SlotRecord {
            slot,
            levels: vec![1.0, 1.0],
            rates: vec![sent],
            routing: vec![routing],
            sent: vec![sent],
            delivered: vec![delivered],
            dropped: vec![sent - delivered],
            switched: vec![switched],
        }
    }

    fn costs(d: f64, ct: f64, cr: f64) -> EnergyCostModel {
        EnergyCostModel {
            data_tx: d / 2.0,
            data_rx: d / 2.0,
            data: d,
            control_tx: ct,
            control_rx: cr,
            data_header_rx: 0.0,
            control_header_rx: 0.0,
            idle_assess: 0.0,
            b_min: ct + cr,
        }
    }

    #[test]
    fn inert_slot_only_advances_counters() {
        let mut st = RunStats::new(1, 2);
        st.record_slot(rec(1, 1, 0, 0, false));
        assert_eq!(st.total_slots, 1);
        assert_eq!(st.sent, vec![0]);
        assert_eq!(st.routing_hist[&vec![1]], 1);
    }

    #[test]
    fn counters_accumulate() {
        let mut st = RunStats::new(1, 2);
        st.record_slot(rec(1, 1, 4, 3, false));
        assert_eq!((st.sent[0], st.delivered[0], st.dropped[0]), (4, 3, 1));
        st.record_slot(rec(2, 2, 0, 0, true));
        assert_eq!(st.switches, vec![1]);
    }

    #[test]
    fn single_state_fraction() {
        let mut st = RunStats::new(1, 2);
        for k in 1..=10 {
            st.record_slot(rec(k, 2, 1, 1, false));
        }
        let r = st.finalize(10);
        assert_eq!(r.summary.routing_fractions.len(), 1);
        assert_eq!(r.summary.routing_fractions[0].fraction, 1.0);
        assert_eq!(r.steady_state, r.summary);
    }

    #[test]
    fn throughput_per_slot() {
        let mut st = RunStats::new(1, 2);
        // 10000 slots, 157270 delivered overall
        for k in 0..10000u64 {
            let d = if k < 7270 { 16 } else { 15 };
            st.record_slot(rec(k + 1, 1, d, d, false));
        }
        let r = st.finalize(1000);
        assert_eq!(r.summary.total_delivered, 157270);
        assert!((r.summary.throughput_per_slot - 15.727).abs() < 1e-12);
        assert_eq!(r.steady_state.slots, 1000);
        assert_eq!(r.steady_state.total_delivered, 15000);
    }

    #[test]
    fn fractions_sum_to_one() {
        let mut st = RunStats::new(1, 2);
        for k in 0..997u64 {
            st.record_slot(rec(k + 1, if k % 3 == 0 { 1 } else { 2 }, 1, 1, false));
        }
        let r = st.finalize(0);
        let sum: f64 = r.summary.routing_fractions.iter().map(|f| f.fraction).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(r.steady_state.slots, 0);
    }

    #[test]
    fn sustainable_rate_examples() {
        let c = costs(1.0, 0.25, 0.25);
        assert_eq!(sustainable_rate(&c, 0.5), 0);
        assert_eq!(sustainable_rate(&c, 10.0), 19);
        assert_eq!(sustainable_rate(&c, 19.5), 38);
    }

    #[test]
    fn sustainable_rate_rejects_non_diamond() {
        let s = Endpoint::Source(0);
        let n = |i| Endpoint::Node(NodeId(i));
        let t = Topology::new(
            1,
            3,
            [(s, n(1)), (n(1), n(3)), (n(3), Endpoint::Destination), (s, n(2)), (n(2), Endpoint::Destination)],
            vec![[vec![NodeId(1), NodeId(3)], vec![NodeId(2)]]],
        );
        assert_eq!(sustainable_rate_diamond(&t, &costs(1.0, 0.25, 0.25), 10.0), Err(NotDiamond));
    }
}
