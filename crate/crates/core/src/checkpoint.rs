//! `DHCK` checkpoint files.
//!
//! ```text
//! "DHCK" | version u16 | body length u64
//! kind u8 | config fingerprint u64 | canonical config (u16 len + utf8)
//! norm 3 × f64 | parameters u32
//! per parameter: name (u16 len + utf8) | ndim u8 | dims u32 × ndim | f32 data
//! crc32 of everything above
//! ```
//!
//! All integers and floats are little-endian. Loading checks, in order:
//! magic, version, length, checksum, then the stored fingerprint against
//! the stored config and (optionally) against the caller's config.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::codec::{verify_crc, ByteReader, ByteWriter, Short};
use crate::config::KeyValues;
use crate::model::{ModelConfig, ModelError, ModelKind, ParameterStore};
use crate::sensorstream::NormalizationParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DHCK";
pub const CHECKPOINT_VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 8;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u16 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (corrupted payload)")]
    Checksum,
    #[error("config fingerprint mismatch: checkpoint {found:016x}, expected {expected:016x}")]
    Fingerprint { expected: u64, found: u64 },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind { expected: &'static str, found: &'static str },
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
    #[error(transparent)]
    Shape(#[from] ModelError),
}

impl From<Short> for CheckpointError {
    fn from(_: Short) -> Self {
        CheckpointError::Truncated
    }
}

pub fn to_bytes(store: &ParameterStore) -> Vec<u8> {
    let mut body = ByteWriter::default();
    body.u8(store.kind().code());
    body.u64(store.fingerprint());
    body.str(&store.config().canonical());
    for v in store.norm().to_array() {
        body.f64(v);
    }
    body.u32(store.len() as u32);
    for (name, t) in store.iter() {
        body.str(name);
        body.u8(t.shape().len() as u8);
        for &d in t.shape() {
            body.u32(d as u32);
        }
        body.f32s(t.data());
    }
    let mut out = ByteWriter::default();
    out.bytes(CHECKPOINT_MAGIC);
    out.u16(CHECKPOINT_VERSION);
    out.u64(body.buf.len() as u64);
    out.bytes(&body.buf);
    out.finish_with_crc()
}

/// Decodes a checkpoint; with `expected`, the stored fingerprint must match
/// that config's.
pub fn from_bytes(data: &[u8], expected: Option<&ModelConfig>) -> Result<ParameterStore, CheckpointError> {
    if data.len() < 4 || &data[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut pre = ByteReader::new(&data[4..]);
    let version = pre.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let body_len = pre.u64()? as usize;
    if data.len() < PREAMBLE.saturating_add(body_len).saturating_add(4) {
        return Err(CheckpointError::Truncated);
    }
    let (body, ok) = verify_crc(data).ok_or(CheckpointError::Truncated)?;
    if !ok {
        return Err(CheckpointError::Checksum);
    }
    let invalid = |what: &str| CheckpointError::Invalid(what.to_owned());
    let mut r = ByteReader::new(&body[PREAMBLE..]);
    let kind = ModelKind::from_code(r.u8()?).ok_or_else(|| invalid("unknown model kind"))?;
    let fingerprint = r.u64()?;
    let text = r.str()?.ok_or_else(|| invalid("config text is not UTF-8"))?;
    let mut kv = KeyValues::parse(&text).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let config = ModelConfig::from_kv(&mut kv).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    kv.finish().map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    if config.fingerprint() != fingerprint {
        return Err(CheckpointError::Fingerprint { expected: config.fingerprint(), found: fingerprint });
    }
    if let Some(cfg) = expected {
        if cfg.fingerprint() != fingerprint {
            return Err(CheckpointError::Fingerprint { expected: cfg.fingerprint(), found: fingerprint });
        }
    }
    let norm = NormalizationParams::from_array([r.f64()?, r.f64()?, r.f64()?]);
    let n = r.u32()? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..n {
        let name = r.str()?.ok_or_else(|| invalid("parameter name is not UTF-8"))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| invalid("shape overflow"))?;
        if len > r.remaining() / 4 {
            return Err(CheckpointError::Truncated);
        }
        let data = r.f32s(len)?;
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        if params.insert(name, t).is_some() {
            return Err(invalid("duplicate parameter name"));
        }
    }
    if r.remaining() != 0 {
        return Err(invalid("trailing bytes"));
    }
    Ok(ParameterStore::from_parts(kind, config, norm, params)?)
}

pub fn save_checkpoint(store: &ParameterStore, path: &Path) -> Result<(), CheckpointError> {
    crate::util::write_atomic(path, &to_bytes(store))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterStore, CheckpointError> {
    from_bytes(&std::fs::read(path)?, None)
}

/// Loads and insists on `cfg`'s fingerprint.
pub fn load_checkpoint_expecting(path: &Path, cfg: &ModelConfig) -> Result<ParameterStore, CheckpointError> {
    from_bytes(&std::fs::read(path)?, Some(cfg))
}

/// Rejects a store of the wrong variant, e.g. an encoder handed to evaluation.
pub fn expect_kind(store: &ParameterStore, kind: ModelKind) -> Result<(), CheckpointError> {
    if store.kind() == kind {
        Ok(())
    } else {
        Err(CheckpointError::Kind { expected: kind.as_str(), found: store.kind().as_str() })
    }
}
