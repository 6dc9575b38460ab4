//! Run configuration files: `section.key = value` lines, or the same
//! keys as nested JSON objects.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::dynamics::{Frame, Initial, RunConfig};
use crate::error::ConfigError;

/// Everything a `simulate` or `sweep` invocation needs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub run: RunConfig,
    /// number of perturbed reruns for the stability probe
    pub count: usize,
    pub output_dir: Option<String>,
    /// b0 values fanned out by `sweep`
    pub sweep_b0: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { run: RunConfig::default(), count: 0, output_dir: None, sweep_b0: Vec::new() }
    }
}

/// Splits `key = value` lines; `#` starts a comment, `[section]` sets a prefix.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = inner.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: k + 1, msg: format!("expected key = value, got '{line}'") });
        };
        let key = key.trim();
        let full = if section.is_empty() || key.contains('.') { key.to_string() } else { format!("{section}.{key}") };
        if out.insert(full.clone(), value.trim().trim_matches('"').to_string()).is_some() {
            return Err(ConfigError::Syntax { line: k + 1, msg: format!("duplicate key {full}") });
        }
    }
    Ok(out)
}

fn flatten_json(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, x, out);
            }
        }
        serde_json::Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(|x| x.to_string().trim_matches('"').to_string()).collect();
            out.insert(prefix.to_string(), parts.join(","));
        }
        serde_json::Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Parses either format and validates the result, listing every violation.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let pairs = if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let mut out = BTreeMap::new();
        flatten_json("", &v, &mut out);
        out
    } else {
        parse_pairs(text)?
    };
    from_pairs(&pairs)
}

pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<SimConfig, ConfigError> {
    let mut cfg = SimConfig::default();
    let mut bad = Vec::new();
    for (key, value) in pairs {
        if let Err(msg) = apply(&mut cfg, key, value) {
            bad.push(format!("{key}: {msg}"));
        }
    }
    if let Err(e) = cfg.run.validate() {
        bad.push(e.to_string());
    }
    for (i, b) in cfg.sweep_b0.iter().enumerate() {
        let mut c = cfg.run.clone();
        c.b0 = *b;
        if let Err(e) = c.validate() {
            bad.push(format!("sweep.b0[{i}]: {e}"));
        }
    }
    if bad.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(bad))
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse '{v}'"))
}

fn apply(cfg: &mut SimConfig, key: &str, v: &str) -> Result<(), String> {
    let run = &mut cfg.run;
    match key {
        "grid.h0" => run.grid.h0 = num(v)?,
        "grid.r_uniform" => run.grid.r_uniform = num(v)?,
        "grid.nodes_per_decade" => run.grid.nodes_per_decade = num(v)?,
        "grid.r_max" => run.grid.r_max = num(v)?,
        "grid.order" => run.grid.order = num(v)?,
        "grid.growth" => run.grid.growth = num(v)?,
        "profile.initial" => {
            run.initial = match v.split_once(':') {
                None if v == "profile" => Initial::Profile,
                Some(("ground", f)) => Initial::ScaledGround { factor: num(f)? },
                _ => return Err("expected 'profile' or 'ground:<factor>'".into()),
            }
        }
        "profile.b0" => run.b0 = num(v)?,
        "profile.lambda0" => run.lambda0 = num(v)?,
        "profile.M" => run.m_param = num(v)?,
        "solver.frame" => {
            run.frame = match v {
                "physical" => Frame::Physical,
                "rescaled" => Frame::Rescaled,
                _ => return Err("expected 'physical' or 'rescaled'".into()),
            }
        }
        "solver.rtol" => run.rtol = num(v)?,
        "solver.dt0" => run.dt0 = num(v)?,
        "solver.dt_max" => run.dt_max = num(v)?,
        "solver.db_max" => run.db_max = num(v)?,
        "solver.feedback" => run.feedback = num(v)?,
        "solver.lambda_stop" => run.lambda_stop = num(v)?,
        "solver.b_stop_ratio" => run.b_stop_ratio = num(v)?,
        "solver.s_max" => run.s_max = num(v)?,
        "solver.t_max" => run.t_max = num(v)?,
        "solver.max_steps" => run.max_steps = num(v)?,
        "perturbation.delta" => run.delta = num(v)?,
        "perturbation.seed" => run.seed = num(v)?,
        "perturbation.count" => cfg.count = num(v)?,
        "output.dir" => cfg.output_dir = Some(v.to_string()),
        "output.cadence" => run.record_every = num(v)?,
        "sweep.b0" => {
            cfg.sweep_b0 = v
                .split(',')
                .map(|x| x.trim())
                .filter(|x| !x.is_empty())
                .map(num)
                .collect::<Result<_, _>>()?
        }
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// Text form accepted back by `parse_config`.
pub fn to_text(cfg: &SimConfig) -> String {
    let r = &cfg.run;
    let initial = match r.initial {
        Initial::Profile => "profile".to_string(),
        Initial::ScaledGround { factor } => format!("ground:{factor}"),
    };
    let frame = match r.frame {
        Frame::Physical => "physical",
        Frame::Rescaled => "rescaled",
    };
    let mut lines = vec![
        format!("grid.h0 = {}", r.grid.h0),
        format!("grid.r_uniform = {}", r.grid.r_uniform),
        format!("grid.nodes_per_decade = {}", r.grid.nodes_per_decade),
        format!("grid.r_max = {}", r.grid.r_max),
        format!("grid.order = {}", r.grid.order),
        format!("grid.growth = {}", r.grid.growth),
        format!("profile.initial = {initial}"),
        format!("profile.b0 = {}", r.b0),
        format!("profile.lambda0 = {}", r.lambda0),
        format!("profile.M = {}", r.m_param),
        format!("solver.frame = {frame}"),
        format!("solver.rtol = {}", r.rtol),
        format!("solver.dt0 = {}", r.dt0),
        format!("solver.dt_max = {}", r.dt_max),
        format!("solver.db_max = {}", r.db_max),
        format!("solver.feedback = {}", r.feedback),
        format!("solver.lambda_stop = {}", r.lambda_stop),
        format!("solver.b_stop_ratio = {}", r.b_stop_ratio),
        format!("solver.s_max = {}", r.s_max),
        format!("solver.t_max = {}", r.t_max),
        format!("solver.max_steps = {}", r.max_steps),
        format!("perturbation.delta = {}", r.delta),
        format!("perturbation.seed = {}", r.seed),
        format!("perturbation.count = {}", cfg.count),
        format!("output.cadence = {}", r.record_every),
    ];
    if let Some(d) = &cfg.output_dir {
        lines.push(format!("output.dir = {d}"));
    }
    if !cfg.sweep_b0.is_empty() {
        let v: Vec<String> = cfg.sweep_b0.iter().map(|b| b.to_string()).collect();
        lines.push(format!("sweep.b0 = {}", v.join(", ")));
    }
    lines.join("\n") + "\n"
}
