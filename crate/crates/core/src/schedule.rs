//! Packet schedule record: one line per slot, `slot;source:time,...`.
//!
//! Sources are one-based and times carry 17 significant digits, so a
//! parsed record reproduces the original `f64` values exactly.

use std::fmt::Write as _;

use crate::engine::{PacketEvent, SlotSchedule};
use crate::error::ConfigError;

pub fn format_line(s: &SlotSchedule) -> String {
    let mut line = format!("{};", s.slot);
    for (i, e) in s.events.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        write!(line, "{}:{:.16e}", e.source + 1, e.time).unwrap();
    }
    line
}

pub fn format_record(schedules: &[SlotSchedule]) -> String {
    let mut out = String::new();
    for s in schedules {
        out.push_str(&format_line(s));
        out.push('\n');
    }
    out
}

/// Parses a record and checks it against the run shape: exactly
/// `num_slots` consecutive lines starting at slot 1, sources in range,
/// times in `[0, 1)` and non-decreasing.
pub fn parse_record(text: &str, num_sources: usize, num_slots: u64) -> Result<Vec<SlotSchedule>, ConfigError> {
    let err = |line: usize, m: String| ConfigError::Schedule(format!("line {line}: {m}"));
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (slot, rest) = raw.split_once(';').ok_or_else(|| err(ln, "missing ';'".into()))?;
        let slot: u64 = slot.trim().parse().map_err(|_| err(ln, format!("bad slot number {slot:?}")))?;
        let expected = out.len() as u64 + 1;
        if slot != expected {
            return Err(err(ln, format!("slot {slot} out of order, expected {expected}")));
        }
        let mut events = Vec::new();
        let mut last = 0.0f64;
        for (seq, item) in rest.split(',').filter(|t| !t.trim().is_empty()).enumerate() {
            let (src, time) = item.split_once(':').ok_or_else(|| err(ln, format!("bad event {item:?}")))?;
            let src: usize = src.trim().parse().map_err(|_| err(ln, format!("bad source {src:?}")))?;
            if src == 0 || src > num_sources {
                return Err(err(ln, format!("source {src} outside 1..={num_sources}")));
            }
            let time: f64 = time.trim().parse().map_err(|_| err(ln, format!("bad time {time:?}")))?;
            if !(0.0..1.0).contains(&time) {
                return Err(err(ln, format!("time {time} outside [0, 1)")));
            }
            if time < last {
                return Err(err(ln, "events not in time order".into()));
            }
            last = time;
            events.push(PacketEvent { source: src - 1, time, seq: seq as u32 });
        }
        out.push(SlotSchedule { slot, events });
    }
    if out.len() as u64 != num_slots {
        return Err(ConfigError::Schedule(format!("{} slots recorded, the run needs {num_slots}", out.len())));
    }
    Ok(out)
}
