use std::fmt;

use super::{Channel, SensorRecord};

pub const WEEK_MS: i64 = 7 * 24 * 3600 * 1000;
/// 1970-01-05T00:00Z, the first Monday after the epoch.
const MONDAY_EPOCH_MS: i64 = 4 * 24 * 3600 * 1000;

/// Weeks with this many heart-rate records or fewer are dropped.
pub const MIN_HEART_RATE_RECORDS: usize = 672;
/// Largest gap between successive heart-rate records inside a continuous run.
pub const CONTINUOUS_GAP_MS: i64 = 10_000;
/// A week needs a continuous run spanning strictly more than this.
pub const CONTINUOUS_SPAN_MS: i64 = 30 * 60 * 1000;

/// One user's records inside `[week_start_ms, week_start_ms + 7 days)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeekWindow {
    pub user_id: String,
    pub week_start_ms: i64,
    pub records: Vec<SensorRecord>,
}

impl WeekWindow {
    pub fn heart_rate_count(&self) -> usize {
        self.records.iter().filter(|r| r.channel == Channel::HeartRate).count()
    }
}

/// UTC Monday-midnight boundary at or before `ts_ms`.
pub fn week_start_of(ts_ms: i64) -> i64 {
    (ts_ms - MONDAY_EPOCH_MS).div_euclid(WEEK_MS) * WEEK_MS + MONDAY_EPOCH_MS
}

/// Splits records (sorted by user, then time) into per-user weeks. Weeks
/// without records are not emitted.
pub fn chunk_weeks(records: &[SensorRecord]) -> Vec<WeekWindow> {
    let mut out: Vec<WeekWindow> = Vec::new();
    for r in records {
        let start = week_start_of(r.timestamp_ms);
        match out.last_mut() {
            Some(w) if w.user_id == r.user_id && w.week_start_ms == start => w.records.push(r.clone()),
            _ => out.push(WeekWindow { user_id: r.user_id.clone(), week_start_ms: start, records: vec![r.clone()] }),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FilterReason {
    TooFewHeartRate,
    NoContinuousRun,
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterReason::TooFewHeartRate => "too_few_heart_rate",
            FilterReason::NoContinuousRun => "no_continuous_run",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterOutcome {
    Accept,
    Reject(FilterReason),
}

impl FilterOutcome {
    pub fn accepted(self) -> bool {
        self == FilterOutcome::Accept
    }
}

/// Longest span (ms) of a heart-rate run whose successive gaps are all
/// within [`CONTINUOUS_GAP_MS`].
pub fn longest_continuous_span(records: &[SensorRecord]) -> i64 {
    let mut best = 0;
    let mut run_start: Option<i64> = None;
    let mut last = 0;
    for r in records.iter().filter(|r| r.channel == Channel::HeartRate) {
        match run_start {
            Some(_) if r.timestamp_ms - last <= CONTINUOUS_GAP_MS => {}
            _ => run_start = Some(r.timestamp_ms),
        }
        last = r.timestamp_ms;
        best = best.max(last - run_start.unwrap_or(last));
    }
    best
}

/// Drops weeks with at most 672 heart-rate records or without a continuous
/// heart-rate run longer than 30 minutes.
pub fn filter_week(w: &WeekWindow) -> FilterOutcome {
    if w.heart_rate_count() <= MIN_HEART_RATE_RECORDS {
        FilterOutcome::Reject(FilterReason::TooFewHeartRate)
    } else if longest_continuous_span(&w.records) <= CONTINUOUS_SPAN_MS {
        FilterOutcome::Reject(FilterReason::NoContinuousRun)
    } else {
        FilterOutcome::Accept
    }
}
