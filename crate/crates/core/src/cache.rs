//! `DHTC` binary tensor cache: the encoded `X` payload for every accepted
//! person-week plus its split, diagnoses and raw event timeline.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "DHTC" | version u16 | body length u64
//! tasks u16 × (u16 len + utf8) | norm 3 × f64 | split seed u64
//! split fractions 3 × f64 | max events u32 | weeks u32
//! per week:
//!   user_id (u16 len + utf8) | week_start_ms i64 | valid_len u32
//!   x: 4096 × 3 f32
//!   targets: K × f32 (+1 / −1, 0 when masked) | mask: K × u8
//!   split u8 | truncated u32
//!   events: valid_len × (offset_ms u32, channel u8, value f32)
//! crc32 of everything above
//! ```

use std::path::Path;

use crate::codec::{verify_crc, ByteReader, ByteWriter, Short};
use crate::sensorstream::{
    chunk_weeks, encode_week, filter_week, split_cohort, Channel, Diagnoses, EncodedWeek, EventMeta, FilterOutcome,
    FilterReason, Label, NormalizationParams, Partition, SensorRecord, SensorStreamError, SplitFractions, WeekWindow,
    INPUT_CHANNELS, MAX_TIMESTEPS,
};

pub const CACHE_MAGIC: &[u8; 4] = b"DHTC";
pub const CACHE_VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 8;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor cache (bad magic)")]
    BadMagic,
    #[error("unsupported cache version {found} (expected {CACHE_VERSION})")]
    Version { found: u16 },
    #[error("cache file is truncated")]
    Truncated,
    #[error("cache checksum mismatch")]
    Checksum,
    #[error("invalid cache contents: {0}")]
    Invalid(String),
}

impl From<Short> for CacheError {
    fn from(_: Short) -> Self {
        CacheError::Truncated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheHeader {
    pub tasks: Vec<String>,
    pub norm: NormalizationParams,
    pub split_seed: u64,
    pub fractions: SplitFractions,
    pub max_events: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedWeek {
    pub week: EncodedWeek,
    pub split: Partition,
    /// One entry per task in header order.
    pub labels: Vec<Option<Label>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCache {
    pub header: CacheHeader,
    pub weeks: Vec<CachedWeek>,
}

impl TensorCache {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = ByteWriter::default();
        let h = &self.header;
        body.u16(h.tasks.len() as u16);
        for t in &h.tasks {
            body.str(t);
        }
        for v in h.norm.to_array() {
            body.f64(v);
        }
        body.u64(h.split_seed);
        for v in [h.fractions.train, h.fractions.tune, h.fractions.test] {
            body.f64(v);
        }
        body.u32(h.max_events);
        body.u32(self.weeks.len() as u32);
        for cw in &self.weeks {
            let w = &cw.week;
            body.str(&w.user_id);
            body.i64(w.week_start_ms);
            body.u32(w.valid_len as u32);
            body.f32s(&w.x);
            for l in &cw.labels {
                body.f32(l.map_or(0.0, Label::sign));
            }
            for l in &cw.labels {
                body.u8(u8::from(l.is_some()));
            }
            body.u8(cw.split.code());
            body.u32(w.truncated as u32);
            for e in &w.events {
                body.u32(e.offset_ms);
                body.u8(e.channel as u8);
                body.f32(e.value);
            }
        }
        let mut out = ByteWriter::default();
        out.bytes(CACHE_MAGIC);
        out.u16(CACHE_VERSION);
        out.u64(body.buf.len() as u64);
        out.bytes(&body.buf);
        out.finish_with_crc()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, CacheError> {
        if data.len() < 4 || &data[..4] != CACHE_MAGIC {
            return Err(CacheError::BadMagic);
        }
        let mut pre = ByteReader::new(&data[4..]);
        let version = pre.u16()?;
        if version != CACHE_VERSION {
            return Err(CacheError::Version { found: version });
        }
        let body_len = pre.u64()? as usize;
        if data.len() < PREAMBLE + body_len + 4 {
            return Err(CacheError::Truncated);
        }
        let (body, ok) = verify_crc(data).ok_or(CacheError::Truncated)?;
        if !ok {
            return Err(CacheError::Checksum);
        }
        let mut r = ByteReader::new(&body[PREAMBLE..]);
        let invalid = |what: &str| CacheError::Invalid(what.to_owned());
        let n_tasks = r.u16()? as usize;
        let tasks = (0..n_tasks)
            .map(|_| r.str()?.ok_or(Short).map_err(CacheError::from))
            .collect::<Result<Vec<_>, _>>()?;
        let norm = NormalizationParams::from_array([r.f64()?, r.f64()?, r.f64()?]);
        let split_seed = r.u64()?;
        let fractions = SplitFractions::new(r.f64()?, r.f64()?, r.f64()?).map_err(|e| CacheError::Invalid(e.to_string()))?;
        let max_events = r.u32()?;
        let n_weeks = r.u32()? as usize;
        let mut weeks = Vec::with_capacity(n_weeks);
        for _ in 0..n_weeks {
            let user_id = r.str()?.ok_or_else(|| invalid("user id is not UTF-8"))?;
            let week_start_ms = r.i64()?;
            let valid_len = r.u32()? as usize;
            if valid_len > MAX_TIMESTEPS {
                return Err(invalid("valid_len exceeds 4096"));
            }
            let x = r.f32s(MAX_TIMESTEPS * INPUT_CHANNELS)?;
            let targets = r.f32s(n_tasks)?;
            let mut labels = Vec::with_capacity(n_tasks);
            for &t in &targets {
                let m = r.u8()?;
                labels.push(match (m, t) {
                    (0, _) => None,
                    (_, v) if v > 0.0 => Some(Label::Positive),
                    _ => Some(Label::Negative),
                });
            }
            let split = Partition::from_code(r.u8()?).ok_or_else(|| invalid("unknown split code"))?;
            let truncated = r.u32()? as usize;
            let mut events = Vec::with_capacity(valid_len);
            for _ in 0..valid_len {
                let offset_ms = r.u32()?;
                let channel = match r.u8()? {
                    0 => Channel::HeartRate,
                    1 => Channel::StepCount,
                    _ => return Err(invalid("unknown channel code")),
                };
                events.push(EventMeta { offset_ms, channel, value: r.f32()? });
            }
            let week = EncodedWeek { user_id, week_start_ms, valid_len, x, events, truncated };
            weeks.push(CachedWeek { week, split, labels });
        }
        if r.remaining() != 0 {
            return Err(invalid("trailing bytes"));
        }
        Ok(Self { header: CacheHeader { tasks, norm, split_seed, fractions, max_events }, weeks })
    }

    pub fn read(path: &Path) -> Result<Self, CacheError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), CacheError> {
        Ok(crate::util::write_atomic(path, &self.to_bytes())?)
    }

    pub fn task_index(&self, task: &str) -> Option<usize> {
        self.header.tasks.iter().position(|t| t == task)
    }

    pub fn weeks_in(&self, split: Partition) -> impl Iterator<Item = &CachedWeek> {
        self.weeks.iter().filter(move |w| w.split == split)
    }
}


/// Counts from one [`build_cache`] run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EncodeStats {
    pub users: usize,
    pub weeks_seen: usize,
    pub weeks_accepted: usize,
    pub rejected_too_few: usize,
    pub rejected_continuity: usize,
    pub events_encoded: usize,
    pub events_truncated: usize,
}

/// Chunks sorted records into weeks, filters them, encodes the survivors
/// and attaches split and diagnoses.
pub fn build_cache(
    records: &[SensorRecord],
    diagnoses: &Diagnoses,
    tasks: &[String],
    norm: NormalizationParams,
    split_seed: u64,
    fractions: SplitFractions,
    max_events: usize,
) -> Result<(TensorCache, EncodeStats), SensorStreamError> {
    let mut users: Vec<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    users.dedup();
    users.sort_unstable();
    users.dedup();
    let split = split_cohort(&users, fractions, split_seed)?;
    let windows = chunk_weeks(records);
    let mut stats = EncodeStats { users: users.len(), weeks_seen: windows.len(), ..EncodeStats::default() };
    let accepted: Vec<&WeekWindow> = windows
        .iter()
        .filter(|w| match filter_week(w) {
            FilterOutcome::Accept => true,
            FilterOutcome::Reject(FilterReason::TooFewHeartRate) => {
                stats.rejected_too_few += 1;
                false
            }
            FilterOutcome::Reject(FilterReason::NoContinuousRun) => {
                stats.rejected_continuity += 1;
                false
            }
        })
        .collect();
    let encoded = crate::par::map_indexed(&accepted, |_, w| encode_week(w, &norm, max_events));
    let mut weeks = Vec::with_capacity(encoded.len());
    for week in encoded {
        stats.events_encoded += week.valid_len;
        stats.events_truncated += week.truncated;
        let known = diagnoses.get(&week.user_id);
        let labels = tasks.iter().map(|t| known.and_then(|d| d.get(t)).copied()).collect();
        let part = split.partition_of(&week.user_id).expect("every user was assigned");
        weeks.push(CachedWeek { week, split: part, labels });
    }
    stats.weeks_accepted = weeks.len();
    let header = CacheHeader {
        tasks: tasks.to_vec(),
        norm,
        split_seed,
        fractions,
        max_events: max_events.clamp(1, MAX_TIMESTEPS) as u32,
    };
    Ok((TensorCache { header, weeks }, stats))
}
