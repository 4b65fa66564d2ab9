//! Experiment configuration files.
//!
//! The format is sectioned `key = value` text (TOML syntax). The
//! `[experiment]` section selects the scenario and the run plumbing; the
//! optional `[sweep]` and `[sampling]` sections parameterize scenario
//! families; every other section holds dotted-key overrides applied to the
//! scenario, e.g.
//!
//! ```text
//! [experiment]
//! scenario = "sim-example"
//! seeds = 10
//!
//! [adaptation]
//! learning_rate = 100
//! ```

use std::path::PathBuf;

use toml::{Table, Value};

use crate::scenarios::{by_name, NetworkKind, Scenario, ScenarioError, SWEEP_RATES};

use super::RunnerError;

pub const DEFAULT_MASTER_SEED: u64 = 20_200_924;
pub const DEFAULT_SAMPLING_SEED: u64 = 5;
pub const DEFAULT_SAMPLING_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitFlags {
    pub trace: bool,
    pub metrics: bool,
    pub summary: bool,
    /// Final network parameters of each trial.
    pub params: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self { trace: true, metrics: true, summary: true, params: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Seed indices; the per-trial seed is derived from `master_seed`.
    pub seeds: Option<Vec<u64>>,
    pub master_seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub emit: EmitFlags,
    /// Dotted-key overrides in file order of sections (keys sorted within).
    pub overrides: Vec<(String, String)>,
    pub rates: Vec<f64>,
    pub networks: Vec<NetworkKind>,
    pub sampling_count: usize,
    pub sampling_seed: u64,
}

impl ExperimentConfig {
    pub fn new(scenario: impl Into<String>) -> Self {
        Self {
            scenario: scenario.into(),
            seeds: None,
            master_seed: DEFAULT_MASTER_SEED,
            out: None,
            jobs: None,
            emit: EmitFlags::default(),
            overrides: Vec::new(),
            rates: SWEEP_RATES.to_vec(),
            networks: vec![NetworkKind::LipNet, NetworkKind::Baseline],
            sampling_count: DEFAULT_SAMPLING_COUNT,
            sampling_seed: DEFAULT_SAMPLING_SEED,
        }
    }

    /// Appends an override, rejecting a key that is already present.
    pub fn add_override(&mut self, key: &str, value: &str) -> Result<(), RunnerError> {
        if self.overrides.iter().any(|(k, _)| k == key) {
            return Err(RunnerError::Config { key: key.to_string(), message: "duplicate key".into() });
        }
        self.overrides.push((key.to_string(), value.to_string()));
        Ok(())
    }

    /// Named scenario with every override applied, validated against the
    /// small-gain gate.
    pub fn base_scenario(&self) -> Result<Scenario, RunnerError> {
        let mut s = by_name(&self.scenario).map_err(|e| RunnerError::Config {
            key: "experiment.scenario".into(),
            message: e.to_string(),
        })?;
        for (k, v) in &self.overrides {
            s.set(k, v).map_err(|e| match e {
                ScenarioError::Key { key, message } => RunnerError::Config { key, message },
                other => RunnerError::Config { key: k.clone(), message: other.to_string() },
            })?;
        }
        if let Err(e) = s.check_certified() {
            return Err(RunnerError::Config { key: self.certificate_key().into(), message: e.to_string() });
        }
        Ok(s)
    }

    /// Key blamed for a failed certificate: the override that moved `L` or
    /// `γ` away from the scenario defaults.
    fn certificate_key(&self) -> &'static str {
        let has = |k: &str| self.overrides.iter().any(|(key, _)| key == k);
        if !has("adaptation.lipschitz") && has("stability.gamma") {
            "stability.gamma"
        } else {
            "adaptation.lipschitz"
        }
    }
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> RunnerError {
    RunnerError::Config { key: key.into(), message: message.into() }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, RunnerError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| config_error("<file>", e.message().to_string()))?;
    let mut cfg = ExperimentConfig::new("");
    let mut scenario = None;
    for (section, body) in &table {
        let Value::Table(body) = body else {
            return Err(config_error(section.as_str(), "top-level keys must live in a section"));
        };
        match section.as_str() {
            "experiment" => {
                for (key, value) in body {
                    let path = format!("experiment.{key}");
                    match key.as_str() {
                        "scenario" => scenario = Some(as_str(&path, value)?.to_string()),
                        "seeds" => cfg.seeds = Some(seed_list(&path, value)?),
                        "master_seed" => cfg.master_seed = as_u64(&path, value)?,
                        "out" => cfg.out = Some(PathBuf::from(as_str(&path, value)?)),
                        "jobs" => {
                            let j = as_u64(&path, value)? as usize;
                            if j == 0 {
                                return Err(config_error(path, "must be at least 1"));
                            }
                            cfg.jobs = Some(j);
                        }
                        "trace" => cfg.emit.trace = as_bool(&path, value)?,
                        "metrics" => cfg.emit.metrics = as_bool(&path, value)?,
                        "summary" => cfg.emit.summary = as_bool(&path, value)?,
                        "params" => cfg.emit.params = as_bool(&path, value)?,
                        _ => return Err(config_error(path, "unknown key")),
                    }
                }
            }
            "sweep" => {
                for (key, value) in body {
                    let path = format!("sweep.{key}");
                    match key.as_str() {
                        "rates" => cfg.rates = rate_list(&path, value)?,
                        "networks" => cfg.networks = network_list(&path, value)?,
                        _ => return Err(config_error(path, "unknown key")),
                    }
                }
            }
            "sampling" => {
                for (key, value) in body {
                    let path = format!("sampling.{key}");
                    match key.as_str() {
                        "count" => {
                            cfg.sampling_count = as_u64(&path, value)? as usize;
                            if cfg.sampling_count == 0 {
                                return Err(config_error(path, "must be at least 1"));
                            }
                        }
                        "seed" => cfg.sampling_seed = as_u64(&path, value)?,
                        _ => return Err(config_error(path, "unknown key")),
                    }
                }
            }
            _ => {
                for (key, value) in body {
                    let path = format!("{section}.{key}");
                    let text = scalar_text(&path, value)?;
                    cfg.add_override(&path, &text)?;
                }
            }
        }
    }
    cfg.scenario = scenario.ok_or_else(|| config_error("experiment.scenario", "missing"))?;
    // surface unknown override keys and certificate failures at parse time
    cfg.base_scenario()?;
    Ok(cfg)
}

fn scalar_text(path: &str, value: &Value) -> Result<String, RunnerError> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(config_error(path, "expected a scalar value")),
    }
}

fn as_str<'a>(path: &str, value: &'a Value) -> Result<&'a str, RunnerError> {
    value.as_str().ok_or_else(|| config_error(path, "expected a string"))
}

fn as_bool(path: &str, value: &Value) -> Result<bool, RunnerError> {
    value.as_bool().ok_or_else(|| config_error(path, "expected true or false"))
}

fn as_u64(path: &str, value: &Value) -> Result<u64, RunnerError> {
    match value.as_integer() {
        Some(i) if i >= 0 => Ok(i as u64),
        _ => Err(config_error(path, "expected a nonnegative integer")),
    }
}

fn as_f64(path: &str, value: &Value) -> Result<f64, RunnerError> {
    match value {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(config_error(path, "expected a number")),
    }
}

/// `seeds = N` means indices `0..N`; an array lists indices explicitly.
fn seed_list(path: &str, value: &Value) -> Result<Vec<u64>, RunnerError> {
    let seeds = match value {
        Value::Array(items) => items.iter().map(|v| as_u64(path, v)).collect::<Result<Vec<_>, _>>()?,
        _ => (0..as_u64(path, value)?).collect(),
    };
    if seeds.is_empty() {
        return Err(config_error(path, "seed list is empty"));
    }
    Ok(seeds)
}

fn rate_list(path: &str, value: &Value) -> Result<Vec<f64>, RunnerError> {
    let Value::Array(items) = value else {
        return Err(config_error(path, "expected an array"));
    };
    let rates = items.iter().map(|v| as_f64(path, v)).collect::<Result<Vec<_>, _>>()?;
    if rates.is_empty() || rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(config_error(path, "expected a nonempty list of nonnegative rates"));
    }
    Ok(rates)
}

fn network_list(path: &str, value: &Value) -> Result<Vec<NetworkKind>, RunnerError> {
    let Value::Array(items) = value else {
        return Err(config_error(path, "expected an array"));
    };
    let kinds = items
        .iter()
        .map(|v| match v.as_str() {
            Some("lipnet") => Ok(NetworkKind::LipNet),
            Some("baseline") => Ok(NetworkKind::Baseline),
            Some("none") => Ok(NetworkKind::None),
            _ => Err(config_error(path, "expected lipnet, baseline or none")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.is_empty() {
        return Err(config_error(path, "empty network list"));
    }
    Ok(kinds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_override_block_keeps_defaults() {
        let cfg = parse_config("[experiment]\nscenario = \"sim-example\"\n").unwrap();
        assert!(cfg.overrides.is_empty());
        assert_eq!(cfg.base_scenario().unwrap(), by_name("sim-example").unwrap());
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse_config(
            "[experiment]\nscenario = \"sim-example\"\nseeds = [1, 4]\n[adaptation]\nlearning_rate = 100\nmode = \"delayed\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, Some(vec![1, 4]));
        let s = cfg.base_scenario().unwrap();
        assert_eq!(s.adaptation.learning_rate, 100.0);
    }

    #[test]
    fn uncertified_lipschitz_rejected_with_key() {
        let err = parse_config("[experiment]\nscenario = \"sim-example\"\n[adaptation]\nlipschitz = 1.5\n").unwrap_err();
        match err {
            RunnerError::Config { key, .. } => assert_eq!(key, "adaptation.lipschitz"),
            other => panic!("unexpected {other}"),
        }
        let err = parse_config("[experiment]\nscenario = \"sim-example\"\n[stability]\ngamma = 2.0\n").unwrap_err();
        assert!(matches!(err, RunnerError::Config { key, .. } if key == "stability.gamma"));
    }

    #[test]
    fn duplicate_and_unknown_keys_rejected() {
        let dup = "[experiment]\nscenario = \"sim-example\"\n[adaptation]\nlearning_rate = 1\nlearning_rate = 2\n";
        assert!(parse_config(dup).is_err());
        let unknown = "[experiment]\nscenario = \"sim-example\"\n[adaptation]\nlearnig_rate = 1\n";
        assert!(matches!(parse_config(unknown), Err(RunnerError::Config { key, .. }) if key == "adaptation.learnig_rate"));
        let exp = "[experiment]\nscenario = \"sim-example\"\ncolour = 1\n";
        assert!(matches!(parse_config(exp), Err(RunnerError::Config { key, .. }) if key == "experiment.colour"));
        assert!(parse_config("[experiment]\nseeds = 3\n").is_err());
        assert!(parse_config("[experiment]\nscenario = \"sim-example\"\nseeds = []\n").is_err());
        let mut cfg = ExperimentConfig::new("sim-example");
        cfg.add_override("run.horizon", "10").unwrap();
        assert!(cfg.add_override("run.horizon", "20").is_err());
    }

    #[test]
    fn type_mismatch_rejected() {
        let bad = "[experiment]\nscenario = \"sim-example\"\n[adaptation]\nlearning_rate = \"fast\"\n";
        assert!(matches!(parse_config(bad), Err(RunnerError::Config { key, .. }) if key == "adaptation.learning_rate"));
        let bad = "[experiment]\nscenario = \"sim-example\"\njobs = \"four\"\n";
        assert!(parse_config(bad).is_err());
    }

    #[test]
    fn sweep_and_sampling_sections() {
        let cfg = parse_config(
            "[experiment]\nscenario = \"lr-sweep\"\n[sweep]\nrates = [1, 10.5]\nnetworks = [\"lipnet\"]\n[sampling]\ncount = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.rates, vec![1.0, 10.5]);
        assert_eq!(cfg.networks, vec![NetworkKind::LipNet]);
        assert_eq!(cfg.sampling_count, 3);
    }
}
