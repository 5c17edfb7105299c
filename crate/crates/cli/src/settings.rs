//! Layered configuration: defaults, then the `--config` file, then flags.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use deepheart::config::{ConfigError, KeyValues};
use deepheart::model::ModelConfig;
use deepheart::synthcohort::SynthConfig;
use deepheart::train::TrainConfig;

/// Keys owned by the CLI itself rather than a library config struct.
pub const CLI_KEYS: [&str; 3] = ["max_events", "split", "n_boot"];

pub struct Settings {
    kv: KeyValues,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let kv = match path {
            Some(p) => KeyValues::read(p)?,
            None => KeyValues::new(),
        };
        Ok(Self { kv })
    }

    /// Flag override; `None` leaves the file value (or default) in place.
    pub fn flag(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.kv.set(key, v.to_string());
        }
    }

    pub fn value<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        self.kv.clone().take_or(key, default)
    }

    pub fn has(&self, key: &str) -> bool {
        self.kv.get(key).is_some()
    }

    pub fn synth(&self) -> Result<SynthConfig, ConfigError> {
        SynthConfig::from_kv(&mut self.kv.clone())
    }

    /// Model settings; the task list defaults to the cache's.
    pub fn model(&self, cache_tasks: &[String]) -> Result<ModelConfig, ConfigError> {
        let mut kv = self.kv.clone();
        if kv.get("tasks").is_none() {
            kv.set("tasks", cache_tasks.join(","));
        }
        ModelConfig::from_kv(&mut kv)
    }

    pub fn train(&self) -> Result<TrainConfig, ConfigError> {
        TrainConfig::from_kv(&mut self.kv.clone())
    }

    /// Rejects keys no component understands. One file may carry settings
    /// for several subcommands, so keys owned by other stages are fine.
    pub fn check_unknown(&self) -> Result<(), ConfigError> {
        let mut known: Vec<String> = CLI_KEYS.iter().map(|k| k.to_string()).collect();
        for kv in [SynthConfig::default().to_kv(), ModelConfig::default().to_kv(), TrainConfig::default().to_kv()] {
            known.extend(kv.iter().map(|(k, _)| k.to_string()));
        }
        let unknown: Vec<String> = self
            .kv
            .iter()
            .map(|(k, _)| k)
            .filter(|k| !known.iter().any(|n| n == k) && !k.starts_with("prevalence.") && !k.starts_with("effect."))
            .map(str::to_string)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(unknown))
        }
    }
}
