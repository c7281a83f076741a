//! Flat sectioned key-value configuration for the simulator.
//!
//! Five sections (`array`, `layout`, `channel`, `budget`, `run`) hold
//! scalar keys; angles are written in degrees and converted to radians
//! internally. An empty file yields the full default scenario. Overrides
//! use `section.key=value` and are applied after the file.

use std::fmt::Write as _;

use fdmimo::harness::{ChannelModel, ScenarioConfig, SchedulerPolicy, Scheme};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key '{section}.{key}'")]
    UnknownKey { section: String, key: String },
    #[error("value out of range for '{key}': {value} ({msg})")]
    Range {
        key: String,
        value: String,
        msg: String,
    },
}

const SECTIONS: [&str; 5] = ["array", "layout", "channel", "budget", "run"];

/// Parse a config document on top of the defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        if let Some(name) = stripped.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                line,
                msg: "unterminated section header".into(),
            })?;
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("unknown section '{name}'"),
                });
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or(ConfigError::Parse {
            line,
            msg: "expected 'key = value'".into(),
        })?;
        if section.is_empty() {
            return Err(ConfigError::Parse {
                line,
                msg: "key outside of a section".into(),
            });
        }
        set_key(&mut cfg, &section, key.trim(), value.trim())?;
    }
    check_ranges(&cfg)?;
    Ok(cfg)
}

/// Apply one `section.key=value` override.
pub fn apply_override(cfg: &mut ScenarioConfig, spec: &str) -> Result<(), ConfigError> {
    let (path, value) = spec.split_once('=').ok_or(ConfigError::Parse {
        line: 0,
        msg: format!("override '{spec}' is not of the form section.key=value"),
    })?;
    let (section, key) = path.trim().split_once('.').ok_or(ConfigError::Parse {
        line: 0,
        msg: format!("override key '{path}' is not of the form section.key"),
    })?;
    set_key(cfg, section, key, value.trim())?;
    check_ranges(cfg)
}

fn unknown(section: &str, key: &str) -> ConfigError {
    ConfigError::UnknownKey {
        section: section.to_string(),
        key: key.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| ConfigError::Range {
        key: format!("{section}.{key}"),
        value: value.to_string(),
        msg: "not a valid number".into(),
    })
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::Range {
            key: format!("{section}.{key}"),
            value: value.to_string(),
            msg: "expected true or false".into(),
        }),
    }
}

fn set_key(
    cfg: &mut ScenarioConfig,
    section: &str,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    match (section, key) {
        ("array", "n_v") => cfg.array.n_v = parse_num(section, key, value)?,
        ("array", "n_h") => cfg.array.n_h = parse_num(section, key, value)?,
        ("array", "spacing_wl") => cfg.array.spacing_wl = parse_num(section, key, value)?,
        ("layout", "r_cell_m") => cfg.layout.r_cell_m = parse_num(section, key, value)?,
        ("layout", "h_bs_m") => cfg.layout.h_bs_m = parse_num(section, key, value)?,
        ("layout", "d_min_m") => cfg.layout.d_min_m = parse_num(section, key, value)?,
        ("layout", "cells") => cfg.layout.cells = parse_num(section, key, value)?,
        ("channel", "model") => {
            cfg.channel.model = match value {
                "one-ring" => ChannelModel::OneRing,
                "single-path" => ChannelModel::SinglePath,
                _ => {
                    return Err(ConfigError::Range {
                        key: "channel.model".into(),
                        value: value.to_string(),
                        msg: "expected one-ring or single-path".into(),
                    })
                }
            }
        }
        ("channel", "delta_a_deg") => {
            cfg.channel.delta_a_rad = parse_num::<f64>(section, key, value)?.to_radians()
        }
        ("channel", "delta_e_deg") => {
            cfg.channel.delta_e_rad = parse_num::<f64>(section, key, value)?.to_radians()
        }
        ("channel", "pl_exponent") => cfg.channel.pl_exponent = parse_num(section, key, value)?,
        ("channel", "carrier_ghz") => cfg.channel.carrier_ghz = parse_num(section, key, value)?,
        ("channel", "d_ref_m") => cfg.channel.d_ref_m = parse_num(section, key, value)?,
        ("channel", "interferer_path_loss") => {
            cfg.channel.interferer_path_loss = parse_bool(section, key, value)?
        }
        ("budget", "tx_power_dbm") => cfg.budget.tx_power_dbm = parse_num(section, key, value)?,
        ("budget", "bandwidth_hz") => cfg.budget.bandwidth_hz = parse_num(section, key, value)?,
        ("budget", "noise_figure_db") => {
            cfg.budget.noise_figure_db = parse_num(section, key, value)?
        }
        ("run", "k_users") => cfg.run.k_users = parse_num(section, key, value)?,
        ("run", "pool_per_cell") => cfg.run.pool_per_cell = parse_num(section, key, value)?,
        ("run", "trials") => cfg.run.trials = parse_num(section, key, value)?,
        ("run", "cov_realizations") => cfg.run.cov_realizations = parse_num(section, key, value)?,
        ("run", "eps_rel") => cfg.run.eps_rel = parse_num(section, key, value)?,
        ("run", "delta_ext_deg") => {
            cfg.run.delta_ext_rad = parse_num::<f64>(section, key, value)?.to_radians()
        }
        ("run", "scheduler") => {
            cfg.run.scheduler = match value {
                "random" => SchedulerPolicy::Random,
                "separated" => SchedulerPolicy::Separated,
                _ => {
                    return Err(ConfigError::Range {
                        key: "run.scheduler".into(),
                        value: value.to_string(),
                        msg: "expected random or separated".into(),
                    })
                }
            }
        }
        ("run", "seed") => cfg.run.seed = parse_num(section, key, value)?,
        ("run", "workers") => cfg.run.workers = parse_num(section, key, value)?,
        ("run", "schemes") => {
            let mut schemes = Vec::new();
            for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let s = Scheme::parse(name).ok_or(ConfigError::Range {
                    key: "run.schemes".into(),
                    value: name.to_string(),
                    msg: "unknown scheme".into(),
                })?;
                if !schemes.contains(&s) {
                    schemes.push(s);
                }
            }
            cfg.schemes = schemes;
        }
        _ => return Err(unknown(section, key)),
    }
    Ok(())
}

fn check_ranges(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    cfg.validate().map_err(|e| ConfigError::Range {
        key: "config".into(),
        value: String::new(),
        msg: e.to_string(),
    })
}

/// Render a config document containing every key; `parse_config` of the
/// output reproduces the input configuration.
pub fn serialize_config(cfg: &ScenarioConfig) -> String {
    let mut s = String::new();
    let model = match cfg.channel.model {
        ChannelModel::OneRing => "one-ring",
        ChannelModel::SinglePath => "single-path",
    };
    let scheduler = match cfg.run.scheduler {
        SchedulerPolicy::Random => "random",
        SchedulerPolicy::Separated => "separated",
    };
    let schemes: Vec<&str> = cfg.schemes.iter().map(|x| x.name()).collect();
    let _ = write!(
        s,
        "[array]\n\
         n_v = {}\n\
         n_h = {}\n\
         spacing_wl = {}\n\
         \n\
         [layout]\n\
         r_cell_m = {}\n\
         h_bs_m = {}\n\
         d_min_m = {}\n\
         cells = {}\n\
         \n\
         [channel]\n\
         model = {}\n\
         delta_a_deg = {}\n\
         delta_e_deg = {}\n\
         pl_exponent = {}\n\
         carrier_ghz = {}\n\
         d_ref_m = {}\n\
         interferer_path_loss = {}\n\
         \n\
         [budget]\n\
         tx_power_dbm = {}\n\
         bandwidth_hz = {}\n\
         noise_figure_db = {}\n\
         \n\
         [run]\n\
         k_users = {}\n\
         pool_per_cell = {}\n\
         trials = {}\n\
         cov_realizations = {}\n\
         eps_rel = {}\n\
         delta_ext_deg = {}\n\
         scheduler = {}\n\
         seed = {}\n\
         workers = {}\n\
         schemes = {}\n",
        cfg.array.n_v,
        cfg.array.n_h,
        cfg.array.spacing_wl,
        cfg.layout.r_cell_m,
        cfg.layout.h_bs_m,
        cfg.layout.d_min_m,
        cfg.layout.cells,
        model,
        cfg.channel.delta_a_rad.to_degrees(),
        cfg.channel.delta_e_rad.to_degrees(),
        cfg.channel.pl_exponent,
        cfg.channel.carrier_ghz,
        cfg.channel.d_ref_m,
        cfg.channel.interferer_path_loss,
        cfg.budget.tx_power_dbm,
        cfg.budget.bandwidth_hz,
        cfg.budget.noise_figure_db,
        cfg.run.k_users,
        cfg.run.pool_per_cell,
        cfg.run.trials,
        cfg.run.cov_realizations,
        cfg.run.eps_rel,
        cfg.run.delta_ext_rad.to_degrees(),
        scheduler,
        cfg.run.seed,
        cfg.run.workers,
        schemes.join(",")
    );
    s
}
