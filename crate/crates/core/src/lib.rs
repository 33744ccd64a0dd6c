//! Slot-based simulator for energy-harvesting networked tags.
//!
//! Sources send packets over one of two intermediate-node paths to a
//! single destination. Intermediate nodes harvest energy, pay for every
//! reception, transmission and overheard header, and report their levels
//! each slot. The destination switches paths with hysteresis and shifts
//! source rates to keep the network within its energy budget.

pub mod config;
pub mod energy;
pub mod engine;
pub mod error;
pub mod model;
pub mod output;
pub mod schedule;
pub mod stats;
pub mod strategy;
pub mod sweep;

pub use config::{load_config, RunConfig};
pub use engine::{run, RunOptions, RunResult};
pub use error::{ConfigError, OutputError};
