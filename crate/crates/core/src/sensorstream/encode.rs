use super::{Channel, SensorStreamError, WeekWindow};

/// Fixed sequence length of the encoded `X` tensor.
pub const MAX_TIMESTEPS: usize = 4096;
/// heart_rate_norm, step_count_norm, dt.
pub const INPUT_CHANNELS: usize = 3;

/// Reference sampling gap (5 s workout cadence) that maps to dt = 0.
const DT_REFERENCE_MS: f64 = 5000.0;

/// `0.1 · ln(dt_ms / 5000)`.
pub fn dt_transform(dt_ms: i64) -> Result<f64, SensorStreamError> {
    if dt_ms <= 0 {
        return Err(SensorStreamError::NonPositiveDt(dt_ms));
    }
    Ok(0.1 * (dt_ms as f64 / DT_REFERENCE_MS).ln())
}

/// Fixed affine input maps; stored alongside every cache and checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationParams {
    pub hr_center: f64,
    pub hr_scale: f64,
    pub step_log_scale: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        Self { hr_center: 70.0, hr_scale: 30.0, step_log_scale: 5.0 }
    }
}

impl NormalizationParams {
    pub fn heart_rate(&self, bpm: f64) -> f64 {
        (bpm - self.hr_center) / self.hr_scale
    }

    pub fn steps(&self, count: f64) -> f64 {
        count.ln_1p() / self.step_log_scale
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.hr_center, self.hr_scale, self.step_log_scale]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { hr_center: a[0], hr_scale: a[1], step_log_scale: a[2] }
    }
}

/// Raw description of one encoded timestep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventMeta {
    /// Milliseconds since the week start.
    pub offset_ms: u32,
    pub channel: Channel,
    pub value: f32,
}

/// One person-week of the `X` tensor: `[MAX_TIMESTEPS × INPUT_CHANNELS]`,
/// zero beyond `valid_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedWeek {
    pub user_id: String,
    pub week_start_ms: i64,
    pub valid_len: usize,
    pub x: Vec<f32>,
    /// One entry per valid timestep.
    pub events: Vec<EventMeta>,
    /// Events dropped past the sequence cap.
    pub truncated: usize,
}

impl EncodedWeek {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.x[t * INPUT_CHANNELS..(t + 1) * INPUT_CHANNELS]
    }

    /// Valid prefix of `X`, row-major `[valid_len × INPUT_CHANNELS]`.
    pub fn valid_x(&self) -> &[f32] {
        &self.x[..self.valid_len * INPUT_CHANNELS]
    }

    /// `(absolute timestamp ms, bpm)` of every heart-rate event.
    pub fn heart_rate_series(&self) -> Vec<(i64, f64)> {
        self.events
            .iter()
            .filter(|e| e.channel == Channel::HeartRate)
            .map(|e| (self.week_start_ms + i64::from(e.offset_ms), f64::from(e.value)))
            .collect()
    }
}

/// Merges both streams into one event timeline. Each timestep carries its
/// own channel's normalized value (zero in the other), and the dt channel
/// holds the transformed gap to the previous event of the same channel
/// (zero for each channel's first event). Only the first `max_events`
/// (at most [`MAX_TIMESTEPS`]) events are kept.
pub fn encode_week(w: &WeekWindow, norm: &NormalizationParams, max_events: usize) -> EncodedWeek {
    let cap = max_events.clamp(1, MAX_TIMESTEPS);
    let valid_len = w.records.len().min(cap);
    let mut x = vec![0.0f32; MAX_TIMESTEPS * INPUT_CHANNELS];
    let mut events = Vec::with_capacity(valid_len);
    let mut last_seen: [Option<i64>; 2] = [None, None];
    for (t, r) in w.records.iter().take(valid_len).enumerate() {
        let slot = r.channel as usize;
        let row = &mut x[t * INPUT_CHANNELS..(t + 1) * INPUT_CHANNELS];
        match r.channel {
            Channel::HeartRate => row[0] = norm.heart_rate(r.value) as f32,
            Channel::StepCount => row[1] = norm.steps(r.value) as f32,
        }
        // Records are deduplicated per channel and sorted, so gaps are positive.
        row[2] = match last_seen[slot] {
            Some(prev) => dt_transform(r.timestamp_ms - prev).unwrap_or(0.0) as f32,
            None => 0.0,
        };
        last_seen[slot] = Some(r.timestamp_ms);
        events.push(EventMeta {
            offset_ms: u32::try_from(r.timestamp_ms - w.week_start_ms).unwrap_or(u32::MAX),
            channel: r.channel,
            value: r.value as f32,
        });
    }
    EncodedWeek {
        user_id: w.user_id.clone(),
        week_start_ms: w.week_start_ms,
        valid_len,
        x,
        events,
        truncated: w.records.len() - valid_len,
    }
}
