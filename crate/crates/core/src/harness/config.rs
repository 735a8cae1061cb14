//! Flat key=value experiment configuration files. `domain` is the one
//! required key and selects the defaults; every other key overrides one
//! field. Unknown and duplicate keys are rejected so a typo cannot
//! silently run the defaults.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::env::Domain;
use crate::error::{Error, Result};
use crate::improve::{ExperimentConfig, LearnerSettings};

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim().to_string();
        let v = v.trim().to_string();
        if !seen.insert(k.clone()) {
            return Err(Error::config(k, "duplicate key"));
        }
        pairs.push((k, v));
    }
    let domain_value = pairs
        .iter()
        .find(|(k, _)| k == "domain")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::config("domain", "missing required key"))?;
    let domain = Domain::parse(&domain_value)
        .ok_or_else(|| Error::config("domain", format!("unknown domain `{domain_value}`")))?;
    let mut cfg = ExperimentConfig::defaults(domain);
    for (key, value) in &pairs {
        apply_key(&mut cfg, key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("unparseable value `{value}`")))
}

fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "domain" => {} // consumed before defaults were built
        "d" => cfg.d = parse_value(key, value)?,
        "n" => cfg.n = parse_value(key, value)?,
        "r" => cfg.r = parse_value(key, value)?,
        "delta" => cfg.delta = parse_value(key, value)?,
        "alpha" => cfg.alpha = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "split" => {
            let (num, den) = value
                .split_once('/')
                .ok_or_else(|| Error::config(key, "expected a ratio like `1/5`"))?;
            cfg.split = (
                parse_value(key, num.trim())?,
                parse_value(key, den.trim())?,
            );
        }
        "es_population" | "es_generations" | "es_step_size" | "es_temperature" => {
            let LearnerSettings::Es {
                population,
                generations,
                step_size,
                temperature,
            } = &mut cfg.learner
            else {
                return Err(Error::config(key, "not a field of this domain's learner"));
            };
            match key {
                "es_population" => *population = parse_value(key, value)?,
                "es_generations" => *generations = parse_value(key, value)?,
                "es_step_size" => *step_size = parse_value(key, value)?,
                _ => *temperature = parse_value(key, value)?,
            }
        }
        "fqi_sweeps" | "fqi_order" | "fqi_ridge" | "fqi_support_floor" => {
            let LearnerSettings::Fqi {
                sweeps,
                order,
                ridge,
                support_floor,
            } = &mut cfg.learner
            else {
                return Err(Error::config(key, "not a field of this domain's learner"));
            };
            match key {
                "fqi_sweeps" => *sweeps = parse_value(key, value)?,
                "fqi_order" => *order = parse_value(key, value)?,
                "fqi_ridge" => *ridge = parse_value(key, value)?,
                _ => *support_floor = parse_value(key, value)?,
            }
        }
        other => return Err(Error::config(other, "unknown key")),
    }
    Ok(())
}

/// Canonical text form; parsing it back yields an equal config.
pub fn write_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "domain = {}", cfg.domain.name());
    let _ = writeln!(s, "d = {}", cfg.d);
    let _ = writeln!(s, "n = {}", cfg.n);
    let _ = writeln!(s, "r = {}", cfg.r);
    let _ = writeln!(s, "delta = {}", cfg.delta);
    let _ = writeln!(s, "alpha = {}", cfg.alpha);
    let _ = writeln!(s, "split = {}/{}", cfg.split.0, cfg.split.1);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    match &cfg.learner {
        LearnerSettings::Es {
            population,
            generations,
            step_size,
            temperature,
        } => {
            let _ = writeln!(s, "es_population = {population}");
            let _ = writeln!(s, "es_generations = {generations}");
            let _ = writeln!(s, "es_step_size = {step_size}");
            let _ = writeln!(s, "es_temperature = {temperature}");
        }
        LearnerSettings::Fqi {
            sweeps,
            order,
            ridge,
            support_floor,
        } => {
            let _ = writeln!(s, "fqi_sweeps = {sweeps}");
            let _ = writeln!(s, "fqi_order = {order}");
            let _ = writeln!(s, "fqi_ridge = {ridge}");
            let _ = writeln!(s, "fqi_support_floor = {support_floor}");
        }
    }
    s
}

/// FNV-1a hash of the canonical text; stamped into run outputs so any
/// number can be traced back to an exact configuration.
pub fn config_hash(cfg: &ExperimentConfig) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in write_config(cfg).bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
