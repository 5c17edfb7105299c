//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Every component
//! reads the keys it owns with [`KeyValues::take`]; whatever is left at the
//! end is reported as unknown so typos never pass silently.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("config key {0:?} given twice")]
    Duplicate(String),
    #[error("config key {key:?}: {reason} (value {value:?})")]
    Invalid { key: String, value: String, reason: String },
    #[error("unknown config keys: {}", .0.join(", "))]
    Unknown(Vec<String>),
}

impl ConfigError {
    pub fn invalid(key: &str, value: impl Display, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), value: value.to_string(), reason: reason.into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.into() });
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.into() });
            }
            if kv.entries.insert(k.into(), v.trim().into()).is_some() {
                return Err(ConfigError::Duplicate(k.into()));
            }
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Inserts or overrides a key (flags win over files).
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e: T::Err| ConfigError::invalid(key, &v, e.to_string())),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Removes every `prefix.name` key, returning `(name, value)` pairs.
    pub fn take_prefixed<T: FromStr>(&mut self, prefix: &str) -> Result<Vec<(String, T)>, ConfigError>
    where
        T::Err: Display,
    {
        let dotted = format!("{prefix}.");
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with(&dotted)).cloned().collect();
        let mut out = Vec::with_capacity(keys.len());
        for k in keys {
            let v = self.take(&k)?.expect("key listed above");
            out.push((k[dotted.len()..].to_string(), v));
        }
        Ok(out)
    }

    /// Errors if any key was never consumed.
    pub fn finish(self) -> Result<(), ConfigError> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(self.entries.into_keys().collect()))
        }
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Sorted `key = value` lines; the canonical form used for hashing.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}
