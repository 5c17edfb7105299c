use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Bound, ModelConfig, ModelError};
use crate::autodiff::{Tape, Tensor};
use crate::sensorstream::NormalizationParams;
use crate::util::keyed_hash;
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    DeepHeart,
    Autoencoder,
    Heuristic,
    /// Encoder parameters only, as produced by pretraining.
    Encoder,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::DeepHeart => 0,
            ModelKind::Autoencoder => 1,
            ModelKind::Heuristic => 2,
            ModelKind::Encoder => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => ModelKind::DeepHeart,
            1 => ModelKind::Autoencoder,
            2 => ModelKind::Heuristic,
            3 => ModelKind::Encoder,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::DeepHeart => "deepheart",
            ModelKind::Autoencoder => "autoencoder",
            ModelKind::Heuristic => "heuristic",
            ModelKind::Encoder => "encoder",
        }
    }
}

/// Named, shaped model parameters plus everything needed to use them: the
/// model config (and so its fingerprint) and the input normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    kind: ModelKind,
    config: ModelConfig,
    norm: NormalizationParams,
    params: BTreeMap<String, Tensor<f32>>,
}

impl ParameterStore {
    /// Fan-in scaled uniform weights, zero biases, LSTM forget-gate bias 1.
    /// Each tensor draws from its own stream keyed by `(seed, name)`, so the
    /// shared encoder initializes identically in every variant.
    pub fn init(cfg: &ModelConfig, kind: ModelKind, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = BTreeMap::new();
        for (name, shape) in cfg.parameter_shapes(kind) {
            let mut rng = ChaCha8Rng::seed_from_u64(keyed_hash(seed, "init", &name));
            let n: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with("/bias") {
                let mut b = vec![0.0; n];
                if name.starts_with("lstm") {
                    let h = n / 4;
                    b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
                b
            } else {
                let bound = if name.starts_with("lstm") {
                    1.0 / ((cfg.width / 2) as f64).sqrt()
                } else {
                    let fan_in = shape[0] * shape[1];
                    (3.0 / fan_in as f64).sqrt()
                };
                (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self { kind, config: cfg.clone(), norm: NormalizationParams::default(), params })
    }

    /// Assembles a store from loaded tensors, checking names and shapes
    /// against `config`.
    pub fn from_parts(
        kind: ModelKind,
        config: ModelConfig,
        norm: NormalizationParams,
        params: BTreeMap<String, Tensor<f32>>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = config.parameter_shapes(kind);
        for (name, shape) in &expected {
            let t = params.get(name).ok_or_else(|| ModelError::Missing(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Shape { name: name.clone(), expected: shape.clone(), found: t.shape().to_vec() });
            }
        }
        if params.len() != expected.len() {
            let extra = params.keys().find(|k| !expected.iter().any(|(n, _)| n == *k)).cloned().unwrap_or_default();
            return Err(ModelError::Config(format!("unexpected parameter {extra:?} for a {} store", kind.as_str())));
        }
        Ok(Self { kind, config, norm, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn norm(&self) -> NormalizationParams {
        self.norm
    }

    pub fn set_norm(&mut self, norm: NormalizationParams) {
        self.norm = norm;
    }

    pub fn fingerprint(&self) -> u64 {
        self.config.fingerprint()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.get(name)
    }

    /// Replaces a tensor of the same shape.
    pub fn set(&mut self, name: &str, value: Tensor<f32>) -> Result<(), ModelError> {
        let slot = self.params.get_mut(name).ok_or_else(|| ModelError::Missing(name.into()))?;
        if slot.shape() != value.shape() {
            return Err(ModelError::Shape { name: name.into(), expected: slot.shape().to_vec(), found: value.shape().to_vec() });
        }
        *slot = value;
        Ok(())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self.params.iter().map(|(k, v)| (k.clone(), tape.param(v.cast::<T>()))).collect();
        Bound { vars }
    }

    /// The encoder subset as a standalone store.
    pub fn encoder_only(&self) -> Self {
        let names = self.config.encoder_names();
        let params = self.params.iter().filter(|(k, _)| names.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
        Self { kind: ModelKind::Encoder, config: self.config.clone(), norm: self.norm, params }
    }
}
