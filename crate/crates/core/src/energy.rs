//! Energy cost derivation, battery bookkeeping and harvesting.
//!
//! Bit energies arrive in µJ/bit; every derived cost and battery level is
//! in mJ.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Bit-level radio parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEnergyParams {
    /// µJ to transmit one bit.
    pub send_bit_energy: f64,
    /// µJ to receive one bit.
    pub receive_bit_energy: f64,
    pub data_packet_bits: f64,
    pub control_packet_bits: f64,
    pub data_header_bits: f64,
    pub control_header_bits: f64,
    /// Bit-equivalent of idle signal detection.
    pub equiv_detection_bits: f64,
}

/// Per-event costs in mJ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCostModel {
    /// Transmit one data packet.
    pub data_tx: f64,
    /// Receive one data packet.
    pub data_rx: f64,
    /// Receive and forward one data packet.
    pub data: f64,
    /// Transmit a status message.
    pub control_tx: f64,
    /// Receive a command message.
    pub control_rx: f64,
    /// Overhear a data header and discard the rest.
    pub data_header_rx: f64,
    /// Overhear a control header; includes `idle_assess`.
    pub control_header_rx: f64,
    /// Idle detection of a control transmission.
    pub idle_assess: f64,
    /// Reserve for one status send plus one command receive.
    pub b_min: f64,
}

const UJ_PER_MJ: f64 = 1000.0;

impl RawEnergyParams {
    pub fn check(&self) -> Result<(), ConfigError> {
        let fields = [
            ("send_bit_energy", self.send_bit_energy),
            ("receive_bit_energy", self.receive_bit_energy),
            ("data_packet_bits", self.data_packet_bits),
            ("control_packet_bits", self.control_packet_bits),
            ("data_header_bits", self.data_header_bits),
            ("control_header_bits", self.control_header_bits),
            ("equiv_detection_bits", self.equiv_detection_bits),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(format!("energy.{name}"), "must be a non-negative number"));
            }
        }
        if self.data_header_bits > self.data_packet_bits {
            return Err(ConfigError::invalid("energy.data_header_bits", "exceeds data_packet_bits"));
        }
        if self.control_header_bits > self.control_packet_bits {
            return Err(ConfigError::invalid("energy.control_header_bits", "exceeds control_packet_bits"));
        }
        Ok(())
    }
}

/// Derives every per-event cost from the bit-level parameters.
pub fn derive_costs(raw: &RawEnergyParams) -> Result<EnergyCostModel, ConfigError> {
    raw.check()?;
    let tx = |bits: f64| raw.send_bit_energy * bits / UJ_PER_MJ;
    let rx = |bits: f64| raw.receive_bit_energy * bits / UJ_PER_MJ;
    let data_tx = tx(raw.data_packet_bits);
    let data_rx = rx(raw.data_packet_bits);
    let control_tx = tx(raw.control_packet_bits);
    let control_rx = rx(raw.control_packet_bits);
    let idle_assess = rx(raw.equiv_detection_bits);
    Ok(EnergyCostModel {
        data_tx,
        data_rx,
        data: data_tx + data_rx,
        control_tx,
        control_rx,
        data_header_rx: rx(raw.data_header_bits),
        control_header_rx: rx(raw.control_header_bits) + idle_assess,
        idle_assess,
        b_min: control_tx + control_rx,
    })
}

/// Per-slot harvest, either constant or read cyclically from a trace.
#[derive(Debug, Clone, PartialEq)]
pub enum HarvestSource {
    Constant(f64),
    Trace(Vec<f64>),
}

impl HarvestSource {
    /// Harvest for zero-based `slot`.
    #[inline]
    pub fn at(&self, slot: u64) -> f64 {
        match self {
            HarvestSource::Constant(e) => *e,
            HarvestSource::Trace(t) => t[(slot % t.len() as u64) as usize],
        }
    }

    /// Parses a trace file body: one non-negative decimal per line, blank
    /// lines and `#` comments skipped.
    pub fn parse_trace(text: &str) -> Result<Vec<f64>, String> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| format!("line {}: not a number: {line:?}", i + 1))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("line {}: harvest must be non-negative", i + 1));
            }
            out.push(v);
        }
        if out.is_empty() {
            return Err("trace is empty".into());
        }
        Ok(out)
    }
}

/// Battery state of one intermediate node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEnergy {
    pub level: f64,
    pub b_max: f64,
    pub initial: f64,
}

impl NodeEnergy {
    pub fn new(initial: f64, b_max: f64) -> Self {
        NodeEnergy { level: initial.min(b_max), b_max, initial }
    }

    /// Adds `amount` of harvest, clamped to `b_max`. Returns the new level.
    #[inline]
    pub fn harvest(&mut self, amount: f64) -> f64 {
        self.level = (self.level + amount).min(self.b_max);
        self.level
    }

    /// Harvest for zero-based `slot` from `source`.
    pub fn harvest_step(&mut self, source: &HarvestSource, slot: u64) -> f64 {
        self.harvest(source.at(slot))
    }

    /// Spends `amount` only if the level is strictly above `amount + floor`.
    #[inline]
    pub fn try_spend(&mut self, amount: f64, floor: f64) -> bool {
        if self.level > amount + floor {
            self.level -= amount;
            true
        } else {
            false
        }
    }

    /// Spends `amount` if the level is at least `amount`.
    #[inline]
    pub fn spend_if_affordable(&mut self, amount: f64) -> bool {
        if self.level >= amount {
            self.level -= amount;
            true
        } else {
            false
        }
    }
}

/// Why energy left (or entered) a battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerReason {
    Data,
    Overhear,
    Status,
    Control,
    Harvest,
}

/// One itemized battery movement. `amount` is positive for spends and the
/// nominal (pre-clamp) harvest for [`LedgerReason::Harvest`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub slot: u64,
    pub node: crate::model::NodeId,
    pub reason: LedgerReason,
    pub amount: f64,
}
