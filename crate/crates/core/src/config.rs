//! Run configuration stored as TOML, with `EARL_<SECTION>__<KEY>` environment overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvConfig;
use crate::reward::ScheduleConfig;
use crate::synth::GenerationParams;
use crate::trainer::TrainConfig;

pub const ENV_PREFIX: &str = "EARL_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {error}")]
    Io {
        path: String,
        error: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment override {var}: {message}")]
    Override { var: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub train_tasks: usize,
    pub eval_tasks: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { train_tasks: 500, eval_tasks: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingConfig {
    /// Write every trajectory of every n-th iteration; 0 disables it.
    pub trajectories_every: usize,
    /// Also write the evaluation trajectories.
    pub eval_trajectories: bool,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self { trajectories_every: 50, eval_trajectories: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub generation: GenerationParams,
    pub suite: SuiteConfig,
    pub env: EnvConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub logging: LoggingConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text`, then applies overrides from `vars` (normally `std::env::vars()`).
    pub fn from_toml_with_overrides(
        text: &str,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut value: toml::Value = toml::from_str(text)?;
        apply_overrides(&mut value, vars)?;
        let cfg: Self = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|error| ConfigError::Io { path: path.display().to_string(), error })?;
        Self::from_toml_with_overrides(&text, std::env::vars())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.generation.validate().map_err(|e| invalid(&e))?;
        self.schedule.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        if self.suite.train_tasks == 0 || self.suite.eval_tasks == 0 {
            return Err(ConfigError::Invalid("suite sizes must be positive".into()));
        }
        if self.env.max_selections == 0 || self.env.n_max == 0 || self.env.initial_budget < 2 {
            return Err(ConfigError::Invalid("env limits are too small".into()));
        }
        if self.env.initial_budget > self.generation.frame_count {
            return Err(ConfigError::Invalid("initial_budget exceeds frame_count".into()));
        }
        Ok(())
    }
}

/// Applies `EARL_SEED=…` and `EARL_<SECTION>__<KEY>=…` style variables to a
/// parsed TOML document. Values are read as TOML literals, falling back to
/// plain strings.
pub fn apply_overrides(
    root: &mut toml::Value,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<(), ConfigError> {
    let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (var, raw) in vars {
        let path: Vec<String> = var[ENV_PREFIX.len()..].split("__").map(str::to_ascii_lowercase).collect();
        if path.iter().any(String::is_empty) {
            return Err(ConfigError::Override { var, message: "empty path segment".into() });
        }
        let value = parse_literal(&raw);
        let (last, parents) = path.split_last().expect("split yields at least one segment");
        let mut table = root
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override { var: var.clone(), message: "config root is not a table".into() })?;
        for key in parents {
            let entry = table.entry(key.clone()).or_insert_with(|| toml::Value::Table(Default::default()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::Override { var: var.clone(), message: format!("`{key}` is not a section") })?;
        }
        table.insert(last.clone(), value);
    }
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_document_is_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.seed = 11;
        cfg.schedule.total_iters = 100;
        cfg.train.ablation.disable_iou_gate = true;
        cfg.generation.sigma = Some(4.5);
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[train]\nlearning_rat = 0.1\n").is_err());
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn env_overrides_nested_and_top_level() {
        let cfg = RunConfig::from_toml_with_overrides(
            "[train]\nlearning_rate = 0.5\n",
            vars(&[
                ("EARL_TRAIN__LEARNING_RATE", "0.25"),
                ("EARL_SEED", "9"),
                ("EARL_SCHEDULE__TOTAL_ITERS", "120"),
                ("EARL_TRAIN__ABLATION__SKIP_RL", "true"),
                ("PATH", "/usr/bin"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.train.learning_rate, 0.25);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.schedule.total_iters, 120);
        assert!(cfg.train.ablation.skip_rl);
    }

    #[test]
    fn bad_overrides_fail() {
        assert!(RunConfig::from_toml_with_overrides("", vars(&[("EARL_TRAIN__GROUP_SIZE", "many")])).is_err());
        assert!(RunConfig::from_toml_with_overrides("", vars(&[("EARL_SEED__X", "1")])).is_err());
        assert!(RunConfig::from_toml_with_overrides("", vars(&[("EARL_TRAIN____X", "1")])).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        assert!(RunConfig::from_toml_str("[schedule]\nthreshold_p = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("[suite]\ntrain_tasks = 0\n").is_err());
        assert!(RunConfig::from_toml_str("[generation]\nmax_evidence = 9\n").is_err());
    }
}
