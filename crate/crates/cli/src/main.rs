use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use enhant_sim::engine::{DebugFlags, RunOptions};
use enhant_sim::output::write_run;
use enhant_sim::schedule::parse_record;
use enhant_sim::strategy::StrategyKind;
use enhant_sim::sweep::{load_sweep, run_sweep};
use enhant_sim::{load_config, ConfigError, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_FATAL: u8 = 3;
const EXIT_IO: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DebugStream {
    SwitchTimes,
    Strategy,
    NonswitchShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    NoFeedback,
    Fwdz,
    Estimate,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::NoFeedback => StrategyKind::NoFeedback,
            StrategyArg::Fwdz => StrategyKind::FeedbackWithDangerZones,
            StrategyArg::Estimate => StrategyKind::Estimate,
        }
    }
}

/// Slot simulator for energy-harvesting tag networks.
#[derive(Debug, Parser)]
#[command(name = "enhant", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, required_unless_present = "sweep")]
    config: Option<PathBuf>,
    /// RNG seed; for sweeps, the seed of repetition 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Reuse the packet schedule recorded by an earlier run.
    #[arg(long, conflicts_with = "sweep")]
    replay: Option<PathBuf>,
    /// Sweep specification (JSON).
    #[arg(long, conflicts_with = "config")]
    sweep: Option<PathBuf>,
    /// Parallel sweep runs (1 = sequential).
    #[arg(long)]
    jobs: Option<usize>,
    /// Enable a debug log stream; repeatable.
    #[arg(long, value_enum)]
    debug: Vec<DebugStream>,
    /// Override the configured strategy.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Override the number of slots.
    #[arg(long)]
    slots: Option<u64>,
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) -> Result<(), ConfigError> {
    if let Some(k) = cli.strategy {
        cfg.strategy.kind = k.into();
    }
    if let Some(n) = cli.slots {
        cfg.set_num_slots(n);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn sweep(cli: &Cli, path: &PathBuf) -> ExitCode {
    let (mut spec, mut base) = match load_sweep(path) {
        Ok(x) => x,
        Err(e) => return config_error(e),
    };
    if let Some(s) = cli.seed {
        spec.seed_base = Some(s);
    }
    if let Err(e) = apply_overrides(&mut base, cli) {
        return config_error(e);
    }
    for w in &base.warnings {
        eprintln!("warning: {w}");
    }
    let report = match run_sweep(&spec, &base, cli.jobs, Some(&cli.out.join("runs"))) {
        Ok(r) => r,
        Err(e) => {
            if e.downcast_ref::<ConfigError>().is_some() {
                return config_error(e);
            }
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    let text = report.to_text();
    let written = report.to_csv().map_err(anyhow::Error::from).and_then(|csv| {
        std::fs::write(cli.out.join("sweep.csv"), csv)?;
        std::fs::write(cli.out.join("sweep.txt"), &text)?;
        Ok(())
    });
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_IO);
    }
    print!("{text}");
    ExitCode::SUCCESS
}

fn single(cli: &Cli, path: &PathBuf) -> ExitCode {
    let mut cfg = match load_config(path) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Err(e) = apply_overrides(&mut cfg, cli) {
        return config_error(e);
    }
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    let replay = match &cli.replay {
        Some(p) => {
            let text = match std::fs::read_to_string(p) {
                Ok(t) => t,
                Err(e) => return config_error(format!("{}: {e}", p.display())),
            };
            match parse_record(&text, cfg.num_sources(), cfg.num_slots) {
                Ok(s) => Some(s),
                Err(e) => return config_error(e),
            }
        }
        None => None,
    };
    let debug = DebugFlags {
        switch_times: cli.debug.contains(&DebugStream::SwitchTimes),
        strategy: cli.debug.contains(&DebugStream::Strategy),
        nonswitch_shift: cli.debug.contains(&DebugStream::NonswitchShift),
    };
    let result = enhant_sim::run(&cfg, RunOptions { debug, record_ledger: false, replay });
    let report = match write_run(&cli.out, &cfg, &result) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    print!("{}", report.render());
    if let Some(f) = result.fatal {
        eprintln!("fatal: {f}");
        return ExitCode::from(EXIT_FATAL);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match (&cli.sweep, &cli.config) {
        (Some(p), _) => sweep(&cli, p),
        (None, Some(p)) => single(&cli, p),
        (None, None) => config_error("either --config or --sweep is required"),
    }
}
