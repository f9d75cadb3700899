//! Run configuration assembled from layers: command-line flags override a
//! TOML config file, which overrides `SPIKENAS_*` environment variables,
//! which override built-in defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snn::CodeMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file: {0}")]
    File(#[from] toml::de::Error),
    #[error("environment variable {var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid setting {key}: {message}")]
    Invalid { key: &'static str, message: String },
}

/// One source of settings; unset fields fall through to lower layers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub data_dir: Option<PathBuf>,
    pub budget: Option<u64>,
    pub bits: Option<u32>,
    pub seed: Option<u64>,
    pub timesteps: Option<usize>,
    pub alpha: Option<f64>,
    pub batch_size: Option<usize>,
    pub jobs: Option<usize>,
    pub tau: Option<f64>,
    pub v_threshold: Option<f64>,
    pub v_reset: Option<f64>,
    pub stem_channels: Option<usize>,
    pub width_multiplier: Option<usize>,
    /// Spatial size the images are block-averaged to before scoring.
    pub resolution: Option<usize>,
    pub no_bias: Option<bool>,
    pub code_mode: Option<CodeMode>,
    pub rate_coding: Option<bool>,
    pub standardize: Option<bool>,
    pub literal_cell_fixing: Option<bool>,
    pub iterations: Option<usize>,
    /// Apply the budget filter to the random baseline as well.
    pub random_budget: Option<bool>,
    pub synthetic_records: Option<usize>,
}

/// Keys read from the environment as `SPIKENAS_<KEY>`.
const ENV_KEYS: &[&str] = &[
    "data_dir",
    "budget",
    "bits",
    "seed",
    "timesteps",
    "alpha",
    "batch_size",
    "jobs",
    "tau",
    "v_threshold",
    "v_reset",
    "stem_channels",
    "width_multiplier",
    "resolution",
    "no_bias",
    "code_mode",
    "rate_coding",
    "standardize",
    "literal_cell_fixing",
    "iterations",
    "random_budget",
    "synthetic_records",
];

macro_rules! overlay_fields {
    ($hi:expr, $lo:expr, $($f:ident),* $(,)?) => {
        ConfigLayer { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<ConfigLayer, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `SPIKENAS_<KEY>` through `lookup`. Values are parsed as TOML
    /// scalars, falling back to plain strings.
    pub fn from_env_with(
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<ConfigLayer, ConfigError> {
        let mut table = toml::Table::new();
        for key in ENV_KEYS {
            let var = format!("SPIKENAS_{}", key.to_ascii_uppercase());
            let Some(raw) = lookup(&var) else { continue };
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or(toml::Value::String(raw.clone()));
            table.insert((*key).to_string(), value);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Env {
                var: "SPIKENAS_*".into(),
                message: e.to_string(),
            })
    }

    pub fn from_env() -> Result<ConfigLayer, ConfigError> {
        ConfigLayer::from_env_with(|k| std::env::var(k).ok())
    }

    /// `self` wins wherever it is set.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        overlay_fields!(
            self,
            lower,
            data_dir,
            budget,
            bits,
            seed,
            timesteps,
            alpha,
            batch_size,
            jobs,
            tau,
            v_threshold,
            v_reset,
            stem_channels,
            width_multiplier,
            resolution,
            no_bias,
            code_mode,
            rate_coding,
            standardize,
            literal_cell_fixing,
            iterations,
            random_budget,
            synthetic_records,
        )
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    /// Overrides the dataset preset budget for constrained scenarios.
    pub budget: Option<u64>,
    pub bits: u32,
    pub seed: u64,
    pub timesteps: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub jobs: usize,
    pub tau: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    pub stem_channels: usize,
    pub width_multiplier: usize,
    pub resolution: usize,
    pub no_bias: bool,
    pub code_mode: CodeMode,
    pub rate_coding: bool,
    pub standardize: bool,
    pub literal_cell_fixing: bool,
    pub iterations: usize,
    pub random_budget: bool,
    pub synthetic_records: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            budget: None,
            bits: 32,
            seed: 0,
            timesteps: 5,
            alpha: 1.0,
            batch_size: 16,
            jobs: 1,
            tau: 2.0,
            v_threshold: 1.0,
            v_reset: 0.0,
            stem_channels: 64,
            width_multiplier: 2,
            resolution: 32,
            no_bias: false,
            code_mode: CodeMode::AnyFire,
            rate_coding: false,
            standardize: false,
            literal_cell_fixing: false,
            iterations: 5000,
            random_budget: true,
            synthetic_records: 512,
        }
    }
}

impl RunConfig {
    /// Resolves `cli > file > env > defaults`.
    pub fn resolve(
        cli: ConfigLayer,
        file: Option<ConfigLayer>,
        env: ConfigLayer,
    ) -> Result<RunConfig, ConfigError> {
        let merged = cli.over(file.unwrap_or_default()).over(env);
        RunConfig::from_layer(merged)
    }

    pub fn from_layer(l: ConfigLayer) -> Result<RunConfig, ConfigError> {
        let d = RunConfig::default();
        let cfg = RunConfig {
            data_dir: l.data_dir.or(d.data_dir),
            budget: l.budget,
            bits: l.bits.unwrap_or(d.bits),
            seed: l.seed.unwrap_or(d.seed),
            timesteps: l.timesteps.unwrap_or(d.timesteps),
            alpha: l.alpha.unwrap_or(d.alpha),
            batch_size: l.batch_size.unwrap_or(d.batch_size),
            jobs: l.jobs.unwrap_or(d.jobs),
            tau: l.tau.unwrap_or(d.tau),
            v_threshold: l.v_threshold.unwrap_or(d.v_threshold),
            v_reset: l.v_reset.unwrap_or(d.v_reset),
            stem_channels: l.stem_channels.unwrap_or(d.stem_channels),
            width_multiplier: l.width_multiplier.unwrap_or(d.width_multiplier),
            resolution: l.resolution.unwrap_or(d.resolution),
            no_bias: l.no_bias.unwrap_or(d.no_bias),
            code_mode: l.code_mode.unwrap_or(d.code_mode),
            rate_coding: l.rate_coding.unwrap_or(d.rate_coding),
            standardize: l.standardize.unwrap_or(d.standardize),
            literal_cell_fixing: l.literal_cell_fixing.unwrap_or(d.literal_cell_fixing),
            iterations: l.iterations.unwrap_or(d.iterations),
            random_budget: l.random_budget.unwrap_or(d.random_budget),
            synthetic_records: l.synthetic_records.unwrap_or(d.synthetic_records),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, message: &str| {
            Err(ConfigError::Invalid {
                key,
                message: message.into(),
            })
        };
        if !(1..=64).contains(&self.bits) {
            return invalid("bits", "must be in 1..=64");
        }
        if self.budget == Some(0) {
            return invalid("budget", "must be positive");
        }
        if self.timesteps == 0 {
            return invalid("timesteps", "must be positive");
        }
        if self.batch_size < 2 {
            return invalid("batch_size", "scoring needs at least 2 samples");
        }
        if self.jobs == 0 {
            return invalid("jobs", "must be at least 1");
        }
        if self.stem_channels == 0 || self.width_multiplier == 0 {
            return invalid("stem_channels", "widths must be positive");
        }
        if self.resolution == 0 || self.resolution > 32 || 32 % self.resolution != 0 {
            return invalid("resolution", "must divide 32");
        }
        if !self.alpha.is_finite() {
            return invalid("alpha", "must be finite");
        }
        if self.iterations == 0 {
            return invalid("iterations", "must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> ConfigLayer {
        let map: HashMap<String, String> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        ConfigLayer::from_env_with(|k| map.get(k).cloned()).unwrap()
    }

    #[test]
    fn precedence_cli_file_env_default() {
        let cli = ConfigLayer {
            seed: Some(1),
            ..Default::default()
        };
        let file = ConfigLayer::from_toml("seed = 2\njobs = 3\nalpha = 0.5").unwrap();
        let e = env(&[
            ("SPIKENAS_SEED", "4"),
            ("SPIKENAS_JOBS", "5"),
            ("SPIKENAS_TIMESTEPS", "7"),
            ("SPIKENAS_DATA_DIR", "/data/cifar"),
        ]);
        let cfg = RunConfig::resolve(cli, Some(file), e).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.jobs, 3);
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.timesteps, 7);
        assert_eq!(cfg.data_dir, Some(PathBuf::from("/data/cifar")));
        assert_eq!(cfg.batch_size, RunConfig::default().batch_size);
    }

    #[test]
    fn env_values_are_typed() {
        let e = env(&[
            ("SPIKENAS_NO_BIAS", "true"),
            ("SPIKENAS_CODE_MODE", "per-timestep"),
        ]);
        assert_eq!(e.no_bias, Some(true));
        assert_eq!(e.code_mode, Some(CodeMode::PerTimestep));
        let bad =
            ConfigLayer::from_env_with(|k| (k == "SPIKENAS_JOBS").then(|| "many".to_string()));
        assert!(bad.is_err());
    }

    #[test]
    fn file_rejects_unknown_keys() {
        assert!(ConfigLayer::from_toml("sed = 1").is_err());
    }

    #[test]
    fn validation() {
        let bad = ConfigLayer {
            resolution: Some(12),
            ..Default::default()
        };
        assert!(RunConfig::from_layer(bad).is_err());
        let bad = ConfigLayer {
            bits: Some(0),
            ..Default::default()
        };
        assert!(RunConfig::from_layer(bad).is_err());
        assert!(RunConfig::from_layer(ConfigLayer::default()).is_ok());
    }
}
