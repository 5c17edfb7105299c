use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;

use serde_json::Value;

use super::{Channel, SensorRecord, SensorStreamError, HEART_RATE_RANGE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    Malformed,
    MissingField,
    InvalidField,
    NonPositiveTimestamp,
    NegativeValue,
    HeartRateOutOfRange,
    Duplicate,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Malformed => "malformed",
            RejectReason::MissingField => "missing_field",
            RejectReason::InvalidField => "invalid_field",
            RejectReason::NonPositiveTimestamp => "non_positive_timestamp",
            RejectReason::NegativeValue => "negative_value",
            RejectReason::HeartRateOutOfRange => "heart_rate_out_of_range",
            RejectReason::Duplicate => "duplicate",
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParsedRecords {
    /// Sorted by user, time, channel.
    pub records: Vec<SensorRecord>,
    pub rejections: BTreeMap<RejectReason, usize>,
}

impl ParsedRecords {
    pub fn rejected(&self) -> usize {
        self.rejections.values().sum()
    }

    pub fn rejected_for(&self, reason: RejectReason) -> usize {
        self.rejections.get(&reason).copied().unwrap_or(0)
    }
}

fn parse_line(line: &str) -> Result<SensorRecord, RejectReason> {
    let value: Value = serde_json::from_str(line).map_err(|_| RejectReason::Malformed)?;
    let obj = value.as_object().ok_or(RejectReason::Malformed)?;
    let field = |k: &str| obj.get(k).ok_or(RejectReason::MissingField);
    let user_id = field("user_id")?;
    let timestamp = field("timestamp_ms")?;
    let channel = field("channel")?;
    let reading = field("value")?;

    let user_id = user_id.as_str().filter(|s| !s.is_empty()).ok_or(RejectReason::InvalidField)?;
    let timestamp_ms = timestamp.as_i64().ok_or(RejectReason::InvalidField)?;
    let channel = channel.as_str().and_then(Channel::parse).ok_or(RejectReason::InvalidField)?;
    let value = reading.as_f64().filter(|v| v.is_finite()).ok_or(RejectReason::InvalidField)?;

    if timestamp_ms <= 0 {
        return Err(RejectReason::NonPositiveTimestamp);
    }
    if value < 0.0 {
        return Err(RejectReason::NegativeValue);
    }
    if channel == Channel::HeartRate && !(HEART_RATE_RANGE.0..=HEART_RATE_RANGE.1).contains(&value) {
        return Err(RejectReason::HeartRateOutOfRange);
    }
    Ok(SensorRecord { user_id: user_id.to_owned(), timestamp_ms, channel, value })
}

/// Parses a JSON-lines sensor stream. Bad lines are counted per reason;
/// only I/O failures abort. Blank lines are ignored.
pub fn parse_records<R: BufRead>(reader: R) -> Result<ParsedRecords, SensorStreamError> {
    let mut out = ParsedRecords::default();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(r) => out.records.push(r),
            Err(reason) => *out.rejections.entry(reason).or_default() += 1,
        }
    }
    out.records.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    let before = out.records.len();
    out.records.dedup_by(|b, a| a.order_key() == b.order_key());
    let dupes = before - out.records.len();
    if dupes > 0 {
        *out.rejections.entry(RejectReason::Duplicate).or_default() += dupes;
    }
    Ok(out)
}
