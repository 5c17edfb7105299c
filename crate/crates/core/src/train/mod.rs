//! Optimization: Adam on the masked squared error, the autoencoder and
//! heuristic pretraining phases, and weight transfer.
//!
//! Each optimizer step fans the batch out one tape per example (in
//! parallel when enabled) and sums the per-example gradients in batch
//! order, so results do not depend on the thread count.

mod adam;
mod data;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::cache::TensorCache;
use crate::config::{ConfigError, KeyValues};
use crate::model::{build_autoencoder, build_deepheart, build_heuristic_head, Bound, ModelConfig, ModelError, ParameterStore};
use crate::par;
use crate::sensorstream::{label_subset_member, Label, Partition, SensorStreamError};
use crate::util::keyed_hash;

pub use adam::Adam;
pub use data::{ablated_input, build_examples, Ablation, Example};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no labeled training weeks remain after label-fraction subsetting")]
    NoLabeledWeeks,
    #[error("no {0} weeks in the cache")]
    NoExamples(&'static str),
    #[error("non-finite gradient for parameter {0:?}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("parameter {name:?}: source shape {src:?} does not match destination {dst:?}")]
    TransferShape { name: String, src: Vec<usize>, dst: Vec<usize> },
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Labels(#[from] SensorStreamError),
}

impl TrainError {
    /// Numeric failures (as opposed to bad inputs).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteGradient(_)
                | TrainError::Diverged { .. }
                | TrainError::Autodiff(AutodiffError::NonFinite { .. })
                | TrainError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pretraining {
    #[default]
    None,
    Autoencoder,
    Heuristic,
}

impl Pretraining {
    pub const ALL: [Pretraining; 3] = [Pretraining::None, Pretraining::Heuristic, Pretraining::Autoencoder];

    pub fn as_str(self) -> &'static str {
        match self {
            Pretraining::None => "none",
            Pretraining::Autoencoder => "autoencoder",
            Pretraining::Heuristic => "heuristic",
        }
    }
}

impl fmt::Display for Pretraining {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pretraining {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| format!("unknown pretraining mode {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without tune-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub label_fraction: f64,
    pub pretraining: Pretraining,
    pub noise_sigma: f64,
    pub ablation: Ablation,
    pub lr: f64,
    /// Fixed epoch budget of either pretraining phase.
    pub pretrain_epochs: usize,
    /// Global gradient L2 norm cap per batch; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            label_fraction: 1.0,
            pretraining: Pretraining::None,
            noise_sigma: 0.1,
            ablation: Ablation::All,
            lr: 1e-3,
            pretrain_epochs: 20,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size == 0 {
            return Err(ConfigError::invalid("batch_size", 0, "must be positive"));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(ConfigError::invalid("label_fraction", self.label_fraction, "must lie in (0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(ConfigError::invalid("noise_sigma", self.noise_sigma, "must be non-negative"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ConfigError::invalid("lr", self.lr, "must be positive"));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(ConfigError::invalid("clip_norm", self.clip_norm, "must be non-negative"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("batch_size", self.batch_size);
        kv.set("max_epochs", self.max_epochs);
        kv.set("patience", self.patience);
        kv.set("seed", self.seed);
        kv.set("label_fraction", self.label_fraction);
        kv.set("pretraining", self.pretraining);
        kv.set("noise_sigma", self.noise_sigma);
        kv.set("ablation", self.ablation);
        kv.set("lr", self.lr);
        kv.set("pretrain_epochs", self.pretrain_epochs);
        kv.set("clip_norm", self.clip_norm);
        kv
    }

    pub fn from_kv(kv: &mut KeyValues) -> Result<Self, ConfigError> {
        let d = Self::default();
        let cfg = Self {
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            max_epochs: kv.take_or("max_epochs", d.max_epochs)?,
            patience: kv.take_or("patience", d.patience)?,
            seed: kv.take_or("seed", d.seed)?,
            label_fraction: kv.take_or("label_fraction", d.label_fraction)?,
            pretraining: kv.take_or("pretraining", d.pretraining)?,
            noise_sigma: kv.take_or("noise_sigma", d.noise_sigma)?,
            ablation: kv.take_or("ablation", d.ablation)?,
            lr: kv.take_or("lr", d.lr)?,
            pretrain_epochs: kv.take_or("pretrain_epochs", d.pretrain_epochs)?,
            clip_norm: kv.take_or("clip_norm", d.clip_norm)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub tune_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub phase: String,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept (1-based).
    pub best_epoch: usize,
    pub train_weeks: usize,
    pub train_users: usize,
    /// `(task, positive, negative)` weeks among the training examples.
    pub label_counts: Vec<(String, usize, usize)>,
}

impl TrainLog {
    /// `phase,epoch,train_loss,tune_loss` rows (no header).
    pub fn csv_rows(&self) -> Vec<String> {
        self.epochs
            .iter()
            .map(|e| {
                let tune = e.tune_loss.map(|v| format!("{v:.9}")).unwrap_or_default();
                format!("{},{},{:.9},{}", self.phase, e.epoch, e.train_loss, tune)
            })
            .collect()
    }
}

/// Applies one Adam update from gradients keyed by parameter name.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut Adam<f32>,
) -> Result<(), TrainError> {
    state.begin_step();
    for (name, g) in grads {
        let p = store.get_mut(name).ok_or_else(|| ModelError::Missing(name.clone()))?;
        state.update(name, p.data_mut(), g.data()).map_err(|_| TrainError::NonFiniteGradient(name.clone()))?;
    }
    Ok(())
}

/// Copies every `src` tensor whose name exists in `dst`; returns how many.
/// Shapes are checked before anything is copied.
pub fn transfer_weights(src: &ParameterStore, dst: &mut ParameterStore) -> Result<usize, TrainError> {
    let shared: Vec<(&str, &Tensor<f32>)> = src.iter().filter(|(name, _)| dst.get(name).is_some()).collect();
    for &(name, t) in &shared {
        let d = dst.get(name).expect("filtered above");
        if d.shape() != t.shape() {
            return Err(TrainError::TransferShape { name: name.into(), src: t.shape().to_vec(), dst: d.shape().to_vec() });
        }
    }
    for &(name, t) in &shared {
        dst.set(name, t.clone())?;
    }
    if shared.is_empty() {
        log::warn!("transfer_weights: no parameter names in common");
    }
    Ok(shared.len())
}

/// Per-example objective recorded on a fresh tape.
type LossFn = dyn Fn(&ModelConfig, &mut Tape<f32>, &Bound, &Example, Option<&mut dyn RngCore>) -> Result<Var, ModelError>
    + Sync;

pub fn supervised_loss(
    cfg: &ModelConfig,
    tape: &mut Tape<f32>,
    p: &Bound,
    ex: &Example,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var, ModelError> {
    let x = tape.constant(ex.x.clone());
    let out = cfg.deepheart(tape, p, x, rng)?;
    Ok(tape.masked_sse(out, &ex.targets, &ex.mask)?)
}

fn reconstruction_loss(
    noise_sigma: f64,
) -> impl Fn(&ModelConfig, &mut Tape<f32>, &Bound, &Example, Option<&mut dyn RngCore>) -> Result<Var, ModelError> + Sync
{
    move |cfg, tape, p, ex, rng| {
        let x = tape.constant(ex.x.clone());
        let rows = ex.x.rows();
        let out = cfg.autoencoder(tape, p, x, rows, noise_sigma, rng)?;
        let ones = Tensor::filled(ex.x.shape(), 1.0);
        Ok(tape.masked_sse(out, &ex.x, &ones)?)
    }
}

fn heuristic_loss(
    cfg: &ModelConfig,
    tape: &mut Tape<f32>,
    p: &Bound,
    ex: &Example,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var, ModelError> {
    let (target, mask) = ex.hrv.as_ref().expect("heuristic examples carry HRV targets");
    let x = tape.constant(ex.x.clone());
    let out = cfg.heuristic(tape, p, x, rng)?;
    Ok(tape.masked_sse(out, target, mask)?)
}

/// Mean loss and summed gradients of one batch.
fn batch_gradients(
    store: &ParameterStore,
    batch: &[&Example],
    seed: u64,
    step_key: &str,
    loss: &LossFn,
) -> Result<(f64, BTreeMap<String, Tensor<f32>>), TrainError> {
    let cfg = store.config();
    let results = par::map_indexed(batch, |i, ex| -> Result<(f64, Vec<(String, Tensor<f32>)>), TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(keyed_hash(seed, "dropout", &format!("{step_key}/{i}")));
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let l = loss(cfg, &mut tape, &p, ex, Some(&mut rng))?;
        let mut grads = tape.backward(l)?;
        let named = p.iter().filter_map(|(n, v)| grads.take(v).map(|g| (n.to_string(), g))).collect();
        Ok((f64::from(tape.value(l).data()[0]), named))
    });
    let scale = 1.0 / batch.len() as f32;
    let mut total = 0.0;
    let mut sum: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for r in results {
        let (l, named) = r?;
        total += l;
        for (name, g) in named {
            match sum.get_mut(&name) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                None => {
                    sum.insert(name, g);
                }
            }
        }
    }
    for g in sum.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total / batch.len() as f64, sum))
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`. Non-finite norms are left for the optimizer to reject.
pub fn clip_gradients(grads: &mut BTreeMap<String, Tensor<f32>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm && norm.is_finite() {
        let scale = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// Mean evaluation-mode loss (no dropout, no noise).
pub fn mean_loss(store: &ParameterStore, examples: &[&Example], loss: &LossFn) -> Result<f64, TrainError> {
    let cfg = store.config();
    let losses = par::map_indexed(examples, |_, ex| -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let l = loss(cfg, &mut tape, &p, ex, None)?;
        Ok(f64::from(tape.value(l).data()[0]))
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len().max(1) as f64)
}

struct LoopSpec<'a> {
    phase: &'a str,
    epochs: usize,
    /// `Some(patience)` enables early stopping on tune loss.
    patience: Option<usize>,
}

fn optimize(
    store: &mut ParameterStore,
    train: &[&Example],
    tune: &[&Example],
    cfg: &TrainConfig,
    spec: LoopSpec<'_>,
    loss: &LossFn,
) -> Result<TrainLog, TrainError> {
    let mut adam = Adam::new(cfg.lr);
    let mut log = TrainLog { phase: spec.phase.into(), ..TrainLog::default() };
    let mut best: Option<(f64, ParameterStore)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=spec.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(keyed_hash(cfg.seed, "shuffle", &format!("{}/{epoch}", spec.phase)));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| train[i]).collect();
            let key = format!("{}/{epoch}/{step}", spec.phase);
            let (l, mut grads) = batch_gradients(store, &batch, cfg.seed, &key, loss)?;
            if !l.is_finite() {
                return Err(TrainError::Diverged { epoch, loss: l });
            }
            clip_gradients(&mut grads, cfg.clip_norm);
            epoch_loss += l * batch.len() as f64;
            adam_step(store, &grads, &mut adam)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let tune_loss = if tune.is_empty() { None } else { Some(mean_loss(store, tune, loss)?) };
        log::info!(
            "{} epoch {epoch}: train {train_loss:.6} tune {}",
            spec.phase,
            tune_loss.map_or("-".to_string(), |v| format!("{v:.6}"))
        );
        log.epochs.push(EpochLog { epoch, train_loss, tune_loss });
        if let (Some(patience), Some(tl)) = (spec.patience, tune_loss) {
            if best.as_ref().map_or(true, |(b, _)| tl < *b) {
                best = Some((tl, store.clone()));
                log.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        } else {
            log.best_epoch = epoch;
        }
    }
    if let Some((_, kept)) = best {
        *store = kept;
    }
    Ok(log)
}

fn count_labels(tasks: &[String], examples: &[&Example]) -> Vec<(String, usize, usize)> {
    tasks
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let pos = examples.iter().filter(|e| e.labels[k] == Some(Label::Positive)).count();
            let neg = examples.iter().filter(|e| e.labels[k] == Some(Label::Negative)).count();
            (t.clone(), pos, neg)
        })
        .collect()
}

fn distinct_users(examples: &[&Example]) -> usize {
    let mut users: Vec<&str> = examples.iter().map(|e| e.user_id.as_str()).collect();
    users.dedup();
    users.sort_unstable();
    users.dedup();
    users.len()
}

/// Supervised multi-task training on the labeled training split (after
/// label-fraction subsetting), early-stopped on tune loss.
pub fn train_supervised(
    cache: &TensorCache,
    model: &ModelConfig,
    cfg: &TrainConfig,
    init: Option<&ParameterStore>,
) -> Result<(ParameterStore, TrainLog), TrainError> {
    cfg.validate().map_err(|e| TrainError::Incompatible(e.to_string()))?;
    let examples = build_examples(cache, model, cfg.ablation, false, |w| w.split != Partition::Test)?;
    let train: Vec<&Example> = examples
        .iter()
        .filter(|e| e.split == Partition::Train && e.has_labels())
        .filter(|e| label_subset_member(cfg.seed, &e.user_id, cfg.label_fraction))
        .collect();
    if train.is_empty() {
        return Err(TrainError::NoLabeledWeeks);
    }
    let tune: Vec<&Example> = examples.iter().filter(|e| e.split == Partition::Tune && e.has_labels()).collect();

    let mut store = build_deepheart(model, cfg.seed)?;
    store.set_norm(cache.header.norm);
    if let Some(src) = init {
        let n = transfer_weights(src, &mut store)?;
        log::info!("initialized {n} parameters from the {} checkpoint", src.kind().as_str());
    }
    let spec = LoopSpec { phase: "supervised", epochs: cfg.max_epochs, patience: Some(cfg.patience) };
    let mut log = optimize(&mut store, &train, &tune, cfg, spec, &supervised_loss)?;
    log.train_weeks = train.len();
    log.train_users = distinct_users(&train);
    log.label_counts = count_labels(&model.tasks, &train);
    Ok((store, log))
}

fn unlabeled_pool<'a>(examples: &'a [Example], split: Partition) -> Vec<&'a Example> {
    examples.iter().filter(|e| e.split == split).collect()
}

/// Denoising sequence-autoencoder pretraining on every training week
/// (labels ignored). Returns the encoder parameters.
pub fn pretrain_autoencoder(
    cache: &TensorCache,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ParameterStore, TrainLog), TrainError> {
    let examples = build_examples(cache, model, cfg.ablation, false, |w| w.split != Partition::Test)?;
    let train = unlabeled_pool(&examples, Partition::Train);
    if train.is_empty() {
        return Err(TrainError::NoExamples("training"));
    }
    let tune = unlabeled_pool(&examples, Partition::Tune);
    let mut store = build_autoencoder(model, cfg.seed)?;
    store.set_norm(cache.header.norm);
    let spec = LoopSpec { phase: "autoencoder", epochs: cfg.pretrain_epochs, patience: None };
    let mut log = optimize(&mut store, &train, &tune, cfg, spec, &reconstruction_loss(cfg.noise_sigma))?;
    log.train_weeks = train.len();
    log.train_users = distinct_users(&train);
    Ok((store.encoder_only(), log))
}

/// Weakly supervised pretraining against the windowed HRV targets.
/// Returns the encoder parameters.
pub fn pretrain_heuristic(
    cache: &TensorCache,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ParameterStore, TrainLog), TrainError> {
    let (store, log) = pretrain_heuristic_full(cache, model, cfg)?;
    Ok((store.encoder_only(), log))
}

/// As [`pretrain_heuristic`] but keeps the HRV head.
pub fn pretrain_heuristic_full(
    cache: &TensorCache,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ParameterStore, TrainLog), TrainError> {
    let examples = build_examples(cache, model, cfg.ablation, true, |w| w.split != Partition::Test)?;
    let train = unlabeled_pool(&examples, Partition::Train);
    if train.is_empty() {
        return Err(TrainError::NoExamples("training"));
    }
    let tune = unlabeled_pool(&examples, Partition::Tune);
    let mut store = build_heuristic_head(model, cfg.seed)?;
    store.set_norm(cache.header.norm);
    let spec = LoopSpec { phase: "heuristic", epochs: cfg.pretrain_epochs, patience: None };
    let mut log = optimize(&mut store, &train, &tune, cfg, spec, &heuristic_loss)?;
    log.train_weeks = train.len();
    log.train_users = distinct_users(&train);
    Ok((store, log))
}

/// Runs the configured pretraining (if any) and then supervised training.
pub fn train_pipeline(
    cache: &TensorCache,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ParameterStore, Vec<TrainLog>), TrainError> {
    let mut logs = Vec::new();
    let init = match cfg.pretraining {
        Pretraining::None => None,
        Pretraining::Autoencoder => {
            let (enc, log) = pretrain_autoencoder(cache, model, cfg)?;
            logs.push(log);
            Some(enc)
        }
        Pretraining::Heuristic => {
            let (enc, log) = pretrain_heuristic(cache, model, cfg)?;
            logs.push(log);
            Some(enc)
        }
    };
    let (store, log) = train_supervised(cache, model, cfg, init.as_ref())?;
    logs.push(log);
    Ok((store, logs))
}
