//! Run manifests: a `key = value` text file written beside each command's
//! primary output before any result lands.
//!
//! The manifest hash covers everything except the command line, file paths
//! and the timestamp, so two runs with identical inputs, configuration and
//! seeds share a hash no matter where or when they ran.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use deepheart::cache::TensorCache;
use deepheart::config::KeyValues;
use deepheart::sensorstream::{label_subset_member, Label, Partition};
use deepheart::util::{sha256_hex, write_atomic};

fn is_hashed(key: &str) -> bool {
    !(key == "command" || key == "started_unix_ms" || key.starts_with("output.") || key.ends_with(".path"))
}

pub struct RunManifest {
    kv: KeyValues,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        let mut kv = KeyValues::new();
        kv.set("subcommand", subcommand);
        kv.set("tool", format!("deepheart {}", env!("CARGO_PKG_VERSION")));
        kv.set("command", std::env::args().collect::<Vec<_>>().join(" "));
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        kv.set("started_unix_ms", now);
        Self { kv }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.kv.set(key, value);
    }

    /// Copies a resolved configuration under `config.`.
    pub fn config(&mut self, cfg: &KeyValues) {
        for (k, v) in cfg.iter() {
            self.kv.set(format!("config.{k}"), v);
        }
    }

    pub fn input(&mut self, name: &str, path: &Path, bytes: &[u8]) {
        self.kv.set(format!("input.{name}.path"), path.display());
        self.kv.set(format!("input.{name}.sha256"), sha256_hex(bytes));
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.kv.set(format!("output.{name}"), path.display());
    }

    /// Per-task positive/negative counts by split, in weeks and in users.
    pub fn cache_labels(&mut self, cache: &TensorCache) {
        for (k, task) in cache.header.tasks.iter().enumerate() {
            for split in [Partition::Train, Partition::Tune, Partition::Test] {
                let mut weeks = [0usize; 2];
                let mut users = std::collections::BTreeMap::new();
                for w in cache.weeks_in(split) {
                    if let Some(l) = w.labels[k] {
                        weeks[usize::from(l == Label::Positive)] += 1;
                        users.insert(w.week.user_id.as_str(), l);
                    }
                }
                let pos_users = users.values().filter(|l| l.is_positive()).count();
                let prefix = format!("labels.{task}.{}", split.as_str());
                self.kv.set(format!("{prefix}.weeks_pos"), weeks[1]);
                self.kv.set(format!("{prefix}.weeks_neg"), weeks[0]);
                self.kv.set(format!("{prefix}.users_pos"), pos_users);
                self.kv.set(format!("{prefix}.users_neg"), users.len() - pos_users);
            }
        }
    }

    /// Labeled training weeks per task after label-fraction subsetting.
    pub fn training_labels(&mut self, cache: &TensorCache, seed: u64, fraction: f64) {
        for (k, task) in cache.header.tasks.iter().enumerate() {
            let mut counts = [0usize; 2];
            for w in cache.weeks_in(Partition::Train) {
                if !label_subset_member(seed, &w.week.user_id, fraction) {
                    continue;
                }
                if let Some(l) = w.labels[k] {
                    counts[usize::from(l.is_positive())] += 1;
                }
            }
            self.kv.set(format!("labels.{task}.train_subset.weeks_pos"), counts[1]);
            self.kv.set(format!("labels.{task}.train_subset.weeks_neg"), counts[0]);
        }
    }

    /// First 16 hex digits of SHA-256 over the hashed keys.
    pub fn hash(&self) -> String {
        let mut hashed = KeyValues::new();
        for (k, v) in self.kv.iter().filter(|(k, _)| is_hashed(k)) {
            hashed.set(k, v);
        }
        sha256_hex(hashed.render().as_bytes())[..16].to_string()
    }

    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest");
        output.with_file_name(name)
    }

    /// Writes the manifest beside `output` and returns its hash.
    pub fn write_beside(&self, output: &Path) -> std::io::Result<String> {
        let hash = self.hash();
        let text = format!("manifest_hash = {hash}\n{}", self.kv.render());
        write_atomic(&Self::path_for(output), text.as_bytes())?;
        Ok(hash)
    }

    /// Reads `config.<key>` from the manifest written beside `output`.
    pub fn read_config_value(output: &Path, key: &str) -> Option<String> {
        let text = std::fs::read_to_string(Self::path_for(output)).ok()?;
        let kv = KeyValues::parse(&text).ok()?;
        kv.get(&format!("config.{key}")).map(str::to_string)
    }
}

/// CSV text: a manifest comment line, then the header and rows.
pub fn csv_text(hash: &str, header: &str, rows: &[String]) -> String {
    let mut s = format!("# manifest {hash}\n{header}\n");
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}
