//! Run configuration: a scale preset, TOML overrides and command-line flags.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use srevo_core::{EvolveConfig, GenParams, ModelConfig, PretrainConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config: unknown key `{0}`")]
    UnknownKey(String),
    #[error("config: `{0}` is set by the top-level `seed`")]
    NestedSeed(String),
    #[error("config: {0}")]
    Value(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Paper,
}

/// Fully resolved settings, echoed into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Run seed. Corpora, pool members and trials derive their seeds from it.
    pub seed: u64,
    pub trials: usize,
    pub evolve_corpus_size: usize,
    /// Generations between saved trial states.
    pub checkpoint_every: usize,
    pub data: GenParams,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub evolve: EvolveConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> RunConfig {
        match preset {
            Preset::Desk => RunConfig {
                preset,
                seed: 0,
                trials: 10,
                evolve_corpus_size: 20,
                checkpoint_every: 25,
                data: GenParams::default(),
                model: ModelConfig::desk(),
                pretrain: PretrainConfig::desk(),
                evolve: EvolveConfig::desk(),
            },
            Preset::Paper => RunConfig {
                preset,
                seed: 0,
                trials: 20,
                evolve_corpus_size: 100,
                checkpoint_every: 100,
                data: GenParams::default(),
                model: ModelConfig::paper(),
                pretrain: PretrainConfig::paper(),
                evolve: EvolveConfig::paper(),
            },
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.model.validate().map_err(|e| invalid(&e))?;
        self.pretrain.validate().map_err(|e| invalid(&e))?;
        self.evolve.validate().map_err(|e| invalid(&e))?;
        if self.trials == 0 || self.evolve_corpus_size == 0 || self.checkpoint_every == 0 {
            return Err(ConfigError::Invalid(
                "trials, evolve_corpus_size and checkpoint_every must be positive".into(),
            ));
        }
        let d = &self.data;
        if d.x_min.is_nan()
            || d.x_max.is_nan()
            || d.x_min >= d.x_max
            || d.n_points < 2
            || d.y_cap.is_nan()
            || d.y_cap <= 0.0
        {
            return Err(ConfigError::Invalid(
                "data needs x_min < x_max, n_points >= 2 and y_cap > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Values given on the command line; they win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
}

/// Merges `over` into `base`, rejecting keys that `base` lacks.
fn merge(base: &mut Value, over: Value, path: &str) -> Result<(), ConfigError> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let key = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                if !path.is_empty() && k == "seed" {
                    return Err(ConfigError::NestedSeed(key));
                }
                let slot = b.get_mut(&k).ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
                merge(slot, v, &key)?;
            }
            Ok(())
        }
        (b, o) => {
            *b = o;
            Ok(())
        }
    }
}

/// Resolves the config text (if any) plus flags. Returns the config and
/// the output directory named in the file, if any.
pub fn resolve(text: Option<&str>, flags: &Overrides) -> Result<(RunConfig, Option<String>), ConfigError> {
    let mut table: toml::Table = match text {
        Some(t) => toml::from_str(t)?,
        None => toml::Table::new(),
    };
    let out = match table.remove("out") {
        Some(toml::Value::String(s)) => Some(s),
        Some(_) => return Err(ConfigError::Invalid("`out` must be a string".into())),
        None => None,
    };
    let file_preset = match table.remove("preset") {
        Some(v) => Some(Preset::deserialize(v)?),
        None => None,
    };
    let preset = flags.preset.or(file_preset).unwrap_or(Preset::Desk);

    let mut value = serde_json::to_value(RunConfig::preset(preset))?;
    merge(&mut value, serde_json::to_value(table)?, "")?;
    let mut cfg: RunConfig = serde_json::from_value(value)?;
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(t) = flags.trials {
        cfg.trials = t;
    }
    cfg.pretrain.seed = cfg.seed;
    cfg.evolve.seed = cfg.seed;
    cfg.validate()?;
    Ok((cfg, out))
}
