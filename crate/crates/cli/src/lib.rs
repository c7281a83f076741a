//! Command-line front end for the simulator: config parsing, the four
//! subcommands (`run`, `sweep`, `coverage`, `validate`), and CSV/JSON
//! result emission for offline plotting.

pub mod config;
pub mod emit;

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fdmimo::harness::{run_scenario, sweep, ScenarioConfig, SweepAxis};
use fdmimo::validate;

use crate::config::{apply_override, parse_config, ConfigError};

#[derive(Debug, Parser)]
#[command(
    name = "fdmimo",
    about = "System-level simulator for full-dimensional massive MIMO downlinks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to a sectioned key-value config file (defaults apply when absent).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. --set run.k_users=5 (repeatable).
    #[arg(long = "set", global = true)]
    pub set: Vec<String>,
    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, default_value = "csv", value_parser = ["csv", "json"])]
    pub format: String,
    /// Worker thread count (0 lets the runtime decide).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured scenario and emit per-user rate records.
    Run,
    /// Re-run the scenario for each value of one parameter axis.
    Sweep {
        /// Axis to vary: n_v | n_h | h_bs | r_cell | tx_power.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long)]
        values: String,
    },
    /// Emit per-scheme rate CDF series with a percentile summary.
    Coverage {
        /// Number of CDF grid points.
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
    /// Run the invariant suite and print one pass/fail line per invariant.
    Validate,
}

/// Machine-parseable error categories; each exits nonzero with a
/// `error[CODE]:` prefix on a single stderr line.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = match &e {
            ConfigError::Parse { .. } => "E_PARSE",
            ConfigError::UnknownKey { .. } => "E_UNKNOWN_KEY",
            ConfigError::Range { .. } => "E_RANGE",
        };
        CliError::new(code, e.to_string())
    }
}

/// Assemble the scenario from the config file, overrides, and flags.
pub fn load_config(common: &CommonArgs) -> Result<ScenarioConfig, CliError> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| CliError::new("E_IO", format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    for spec in &common.set {
        apply_override(&mut cfg, spec)?;
    }
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(workers) = common.workers {
        cfg.run.workers = workers;
    }
    cfg.validate()
        .map_err(|e| CliError::new("E_RANGE", e.to_string()))?;
    Ok(cfg)
}

fn write_output(common: &CommonArgs, text: &str) -> Result<(), CliError> {
    match &common.out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::new("E_IO", format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Execute a parsed invocation; returns the process exit code.
pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Run => {
            let cfg = load_config(&cli.common)?;
            let report =
                run_scenario(&cfg).map_err(|e| CliError::new("E_RUN", e.to_string()))?;
            let text = match cli.common.format.as_str() {
                "json" => emit::report_json(&report),
                _ => emit::report_csv(&report),
            };
            write_output(&cli.common, &text)?;
            Ok(0)
        }
        Command::Sweep { axis, values } => {
            let cfg = load_config(&cli.common)?;
            let axis = SweepAxis::parse(axis).ok_or_else(|| {
                CliError::new("E_USAGE", format!("unknown sweep axis '{axis}'"))
            })?;
            let values: Vec<f64> = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::new("E_USAGE", format!("bad sweep value '{v}'")))
                })
                .collect::<Result<_, _>>()?;
            let rows =
                sweep(&cfg, axis, &values).map_err(|e| CliError::new("E_RUN", e.to_string()))?;
            let text = match cli.common.format.as_str() {
                "json" => emit::sweep_json(axis, &rows),
                _ => emit::sweep_csv(axis, &rows),
            };
            write_output(&cli.common, &text)?;
            Ok(0)
        }
        Command::Coverage { grid } => {
            let cfg = load_config(&cli.common)?;
            let report =
                run_scenario(&cfg).map_err(|e| CliError::new("E_RUN", e.to_string()))?;
            let text = match cli.common.format.as_str() {
                "json" => emit::coverage_json(&report, *grid)
                    .map_err(|e| CliError::new("E_RUN", e))?,
                _ => emit::coverage_csv(&report, *grid)
                    .map_err(|e| CliError::new("E_RUN", e))?,
            };
            write_output(&cli.common, &text)?;
            Ok(0)
        }
        Command::Validate => {
            let cfg = load_config(&cli.common)?;
            let report = validate::run(&cfg);
            let mut text = String::new();
            for c in &report.checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                text.push_str(&format!("{tag} {} - {}\n", c.name, c.detail));
            }
            write_output(&cli.common, &text)?;
            Ok(0)
        }
    }
}
