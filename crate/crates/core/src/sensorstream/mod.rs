//! Raw sensor ingestion: parsing, cohort partitioning, week chunking,
//! quality filtering and the `X`/`Y` tensor encoding.

mod encode;
mod labels;
mod parse;
mod split;
mod week;

pub use encode::{
    dt_transform, encode_week, EncodedWeek, EventMeta, NormalizationParams, INPUT_CHANNELS, MAX_TIMESTEPS,
};
pub use labels::{align_labels, parse_labels, Diagnoses, Label, TaskTargets, DEFAULT_TASKS};
pub use parse::{parse_records, ParsedRecords, RejectReason};
pub use split::{label_subset_member, split_cohort, CohortSplit, Partition, SplitFractions};
pub use week::{
    chunk_weeks, filter_week, week_start_of, FilterOutcome, FilterReason, WeekWindow, CONTINUOUS_GAP_MS,
    CONTINUOUS_SPAN_MS, MIN_HEART_RATE_RECORDS, WEEK_MS,
};

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    HeartRate,
    StepCount,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::HeartRate => "heart_rate",
            Channel::StepCount => "step_count",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "heart_rate" => Some(Channel::HeartRate),
            "step_count" => Some(Channel::StepCount),
            _ => None,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One timestamped measurement from one user.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorRecord {
    pub user_id: String,
    pub timestamp_ms: i64,
    pub channel: Channel,
    /// bpm for heart rate, count for steps.
    pub value: f64,
}

impl SensorRecord {
    /// Sort key: user, then time, heart rate before steps on ties.
    pub fn order_key(&self) -> (&str, i64, Channel) {
        (&self.user_id, self.timestamp_ms, self.channel)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "user_id": self.user_id,
            "timestamp_ms": self.timestamp_ms,
            "channel": self.channel.as_str(),
            "value": self.value,
        })
        .to_string()
    }
}

/// Heart-rate readings outside this range are rejected at parse time.
pub const HEART_RATE_RANGE: (f64, f64) = (20.0, 250.0);

#[derive(Debug, thiserror::Error)]
pub enum SensorStreamError {
    #[error("reading input: {0}")]
    Io(#[from] std::io::Error),
    #[error("dt must be positive, got {0} ms")]
    NonPositiveDt(i64),
    #[error("split fractions {0:?} must be non-negative, include a positive entry and sum to 1")]
    BadFractions([f64; 3]),
    #[error("cannot split an empty user list")]
    NoUsers,
    #[error("labels line {line}: {detail}")]
    BadLabel { line: usize, detail: String },
    #[error("pooled length {given} does not match ceil({valid_len} / 2^{stages}) = {expected}")]
    PooledLength { given: usize, expected: usize, valid_len: usize, stages: u32 },
}
