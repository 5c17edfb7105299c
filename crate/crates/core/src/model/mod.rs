//! The convolutional + bidirectional LSTM sequence model, its two
//! pretraining variants, and the feature-based baselines.
//!
//! All three networks share one encoder: an initial wide convolution,
//! `conv_depth − 1` pre-activation residual units (each followed by dropout
//! and max pooling), then `lstm_depth` bidirectional LSTM layers. Encoder
//! parameters carry the same names in every variant, so pretraining
//! transfer is a name-wise copy.

pub mod baselines;
mod store;

use std::collections::BTreeMap;

use rand::RngCore;

use crate::autodiff::{AutodiffError, Direction, Tape, Var};
use crate::config::{ConfigError, KeyValues};
use crate::sensorstream::{DEFAULT_TASKS, INPUT_CHANNELS};
use crate::Real;

pub use store::{ModelKind, ParameterStore};

/// Heuristic HRV output channels.
pub const HEURISTIC_CHANNELS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("missing parameter {0:?}")]
    Missing(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub width: usize,
    pub conv_depth: usize,
    pub lstm_depth: usize,
    pub initial_filter: usize,
    pub residual_filter: usize,
    pub dropout_p: f64,
    pub pool: usize,
    pub tasks: Vec<String>,
    pub input_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 128,
            conv_depth: 3,
            lstm_depth: 4,
            initial_filter: 12,
            residual_filter: 5,
            dropout_p: 0.2,
            pool: 2,
            tasks: DEFAULT_TASKS.iter().map(|s| s.to_string()).collect(),
            input_channels: INPUT_CHANNELS,
        }
    }
}

impl ModelConfig {
    pub fn new(width: usize, conv_depth: usize, lstm_depth: usize, initial_filter: usize) -> Self {
        Self { width, conv_depth, lstm_depth, initial_filter, ..Self::default() }
    }

    pub fn tasks_len(&self) -> usize {
        self.tasks.len()
    }

    /// One pooling stage per convolutional layer.
    pub fn pool_stages(&self) -> u32 {
        self.conv_depth as u32
    }

    /// `ceil(len / pool^stages)`.
    pub fn output_len(&self, input_len: usize) -> usize {
        (0..self.conv_depth).fold(input_len, |l, _| l.div_ceil(self.pool))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.width == 0 || self.width % 2 != 0 {
            return bad(&format!("width {} must be a positive even number (bidirectional split)", self.width));
        }
        if self.conv_depth == 0 || self.lstm_depth == 0 {
            return bad("conv_depth and lstm_depth must be at least 1");
        }
        if self.initial_filter == 0 || self.residual_filter == 0 || self.pool == 0 {
            return bad("filters and pool must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(&format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.tasks.is_empty() || self.input_channels == 0 {
            return bad("need at least one task and one input channel");
        }
        Ok(())
    }

    /// Checks the ranges the hyperparameter grid explores.
    pub fn validate_grid(&self) -> Result<(), ModelError> {
        self.validate()?;
        let ok = [32, 64, 128].contains(&self.width)
            && [2, 4].contains(&self.conv_depth)
            && [2, 4].contains(&self.lstm_depth)
            && [5, 12].contains(&self.initial_filter);
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config(format!(
                "grid cell {}/{}/{}/{} outside the explored ranges",
                self.width, self.conv_depth, self.lstm_depth, self.initial_filter
            )))
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("width", self.width);
        kv.set("conv_depth", self.conv_depth);
        kv.set("lstm_depth", self.lstm_depth);
        kv.set("initial_filter", self.initial_filter);
        kv.set("residual_filter", self.residual_filter);
        kv.set("dropout_p", self.dropout_p);
        kv.set("pool", self.pool);
        kv.set("tasks", self.tasks.join(","));
        kv.set("input_channels", self.input_channels);
        kv
    }

    pub fn from_kv(kv: &mut KeyValues) -> Result<Self, ConfigError> {
        let d = Self::default();
        let tasks = match kv.take::<String>("tasks")? {
            Some(t) => t.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => d.tasks,
        };
        let cfg = Self {
            width: kv.take_or("width", d.width)?,
            conv_depth: kv.take_or("conv_depth", d.conv_depth)?,
            lstm_depth: kv.take_or("lstm_depth", d.lstm_depth)?,
            initial_filter: kv.take_or("initial_filter", d.initial_filter)?,
            residual_filter: kv.take_or("residual_filter", d.residual_filter)?,
            dropout_p: kv.take_or("dropout_p", d.dropout_p)?,
            pool: kv.take_or("pool", d.pool)?,
            tasks,
            input_channels: kv.take_or("input_channels", d.input_channels)?,
        };
        cfg.validate().map_err(|e| ConfigError::invalid("model", "", e.to_string()))?;
        Ok(cfg)
    }

    /// Sorted `key = value` text; the checkpoint fingerprint hashes this.
    pub fn canonical(&self) -> String {
        self.to_kv().render()
    }

    pub fn fingerprint(&self) -> u64 {
        crate::util::fingerprint64(self.canonical().as_bytes())
    }

    /// Shapes of every parameter of `kind`, by name.
    pub fn parameter_shapes(&self, kind: ModelKind) -> Vec<(String, Vec<usize>)> {
        let w = self.width;
        let h = w / 2;
        let mut out = vec![
            ("conv0/weight".to_string(), vec![self.initial_filter, self.input_channels, w]),
            ("conv0/bias".to_string(), vec![w]),
        ];
        for i in 1..self.conv_depth {
            out.push((format!("res{i}/weight"), vec![self.residual_filter, w, w]));
            out.push((format!("res{i}/bias"), vec![w]));
        }
        for l in 0..self.lstm_depth {
            for dir in ["fwd", "bwd"] {
                out.push((format!("lstm{l}/{dir}/w_ih"), vec![w, 4 * h]));
                out.push((format!("lstm{l}/{dir}/w_hh"), vec![h, 4 * h]));
                out.push((format!("lstm{l}/{dir}/bias"), vec![4 * h]));
            }
        }
        match kind {
            ModelKind::Encoder => {}
            ModelKind::DeepHeart => {
                out.push(("head/weight".into(), vec![1, w, self.tasks.len()]));
                out.push(("head/bias".into(), vec![self.tasks.len()]));
            }
            ModelKind::Heuristic => {
                out.push(("hrv_head/weight".into(), vec![1, w, HEURISTIC_CHANNELS]));
                out.push(("hrv_head/bias".into(), vec![HEURISTIC_CHANNELS]));
            }
            ModelKind::Autoencoder => {
                for s in 0..self.conv_depth {
                    out.push((format!("dec{s}/weight"), vec![self.residual_filter, w, w]));
                    out.push((format!("dec{s}/bias"), vec![w]));
                }
                out.push(("dec_out/weight".into(), vec![1, w, self.input_channels]));
                out.push(("dec_out/bias".into(), vec![self.input_channels]));
            }
        }
        out
    }

    pub fn encoder_names(&self) -> Vec<String> {
        self.parameter_shapes(ModelKind::Encoder).into_iter().map(|(n, _)| n).collect()
    }

    /// Encoder stack: `x[T×C]` → `[ceil(T/2^P) × width]`. Dropout is active
    /// only when `rng` is given.
    pub fn encode<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        let training = rng.is_some();
        let mut h = tape.conv1d(x, p.get("conv0/weight")?, p.get("conv0/bias")?)?;
        h = tape.relu(h)?;
        h = dropout(tape, h, self.dropout_p, training, &mut rng)?;
        h = tape.maxpool1d(h, self.pool)?;
        for i in 1..self.conv_depth {
            let a = tape.relu(h)?;
            let branch = tape.conv1d(a, p.get(&format!("res{i}/weight"))?, p.get(&format!("res{i}/bias"))?)?;
            h = tape.add(h, branch)?;
            h = dropout(tape, h, self.dropout_p, training, &mut rng)?;
            h = tape.maxpool1d(h, self.pool)?;
        }
        for l in 0..self.lstm_depth {
            let layer = |dir: &str, field: &str| p.get(&format!("lstm{l}/{dir}/{field}"));
            let f = tape.lstm(h, layer("fwd", "w_ih")?, layer("fwd", "w_hh")?, layer("fwd", "bias")?, Direction::Forward)?;
            let b =
                tape.lstm(h, layer("bwd", "w_ih")?, layer("bwd", "w_hh")?, layer("bwd", "bias")?, Direction::Backward)?;
            h = tape.concat(&[f, b])?;
        }
        Ok(dropout(tape, h, self.dropout_p, training, &mut rng)?)
    }

    /// Per-task scores in `[−1, 1]`, `[ceil(T/2^P) × K]`.
    pub fn deepheart<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        let h = self.encode(tape, p, x, rng)?;
        let out = tape.conv1d(h, p.get("head/weight")?, p.get("head/bias")?)?;
        Ok(tape.tanh(out)?)
    }

    /// Linear heuristic HRV predictions, `[ceil(T/2^P) × 4]`.
    pub fn heuristic<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        let h = self.encode(tape, p, x, rng)?;
        Ok(tape.conv1d(h, p.get("hrv_head/weight")?, p.get("hrv_head/bias")?)?)
    }

    /// Reconstruction of the clean input `x[T×C]`, which is corrupted with
    /// N(0, noise_sigma²) on its first `valid_rows` rows when training.
    pub fn autoencoder<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        valid_rows: usize,
        noise_sigma: f64,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        let rows = tape.shape(x)[0];
        let noisy = match rng.as_deref_mut() {
            Some(r) => tape.gaussian_noise(x, noise_sigma, valid_rows, r)?,
            None => x,
        };
        let mut h = self.encode(tape, p, noisy, rng)?;
        for s in 0..self.conv_depth {
            h = tape.upsample_nearest(h, self.pool)?;
            h = tape.conv1d(h, p.get(&format!("dec{s}/weight"))?, p.get(&format!("dec{s}/bias"))?)?;
            h = tape.relu(h)?;
        }
        let out = tape.conv1d(h, p.get("dec_out/weight")?, p.get("dec_out/bias")?)?;
        Ok(tape.crop_rows(out, rows)?)
    }
}

fn dropout<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: f64,
    training: bool,
    rng: &mut Option<&mut dyn RngCore>,
) -> Result<Var, AutodiffError> {
    match rng.as_deref_mut() {
        Some(r) => tape.dropout(x, p, training, r),
        None => Ok(x),
    }
}

/// Parameter leaves recorded on one tape, by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::Missing(name.into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Binds explicit `(name, var)` pairs, e.g. leaves made by a gradient check.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Var)>) -> Self {
        Self { vars: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }
}

/// The 22 (width, conv_depth, lstm_depth, initial_filter) cells of the
/// published hyperparameter table.
pub fn table3_grid() -> Vec<ModelConfig> {
    const CELLS: [(usize, usize, usize, usize); 22] = [
        (32, 2, 2, 12),
        (32, 2, 2, 5),
        (32, 2, 4, 12),
        (32, 2, 4, 5),
        (32, 4, 2, 12),
        (32, 4, 2, 5),
        (32, 4, 4, 12),
        (32, 4, 4, 5),
        (64, 2, 2, 12),
        (64, 2, 2, 5),
        (64, 2, 4, 12),
        (64, 4, 2, 12),
        (64, 4, 2, 5),
        (64, 4, 4, 12),
        (64, 4, 4, 5),
        (128, 2, 2, 5),
        (128, 2, 4, 12),
        (128, 2, 4, 5),
        (128, 4, 2, 12),
        (128, 4, 2, 5),
        (128, 4, 4, 12),
        (128, 4, 4, 5),
    ];
    CELLS.iter().map(|&(w, c, l, f)| ModelConfig::new(w, c, l, f)).collect()
}

pub fn build_deepheart(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore, ModelError> {
    ParameterStore::init(cfg, ModelKind::DeepHeart, seed)
}

pub fn build_autoencoder(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore, ModelError> {
    ParameterStore::init(cfg, ModelKind::Autoencoder, seed)
}

pub fn build_heuristic_head(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore, ModelError> {
    ParameterStore::init(cfg, ModelKind::Heuristic, seed)
}
