use crate::sensorstream::{Channel, EventMeta};

/// Trailing windows of the heuristic targets: 5 s, 30 s, 5 min, 30 min.
pub const HRV_WINDOWS_MS: [i64; 4] = [5_000, 30_000, 300_000, 1_800_000];

/// Per-timestep heuristic HRV targets, `[len × 4]` with a matching mask.
#[derive(Clone, Debug, PartialEq)]
pub struct HrvTargets {
    pub len: usize,
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
}

/// For every event, the mean absolute difference of successive heart-rate
/// readings whose later reading falls in `(t − w, t]`, for each window `w`.
/// Masked where no such pair exists.
pub fn hrv_targets_full(events: &[EventMeta]) -> HrvTargets {
    let k = HRV_WINDOWS_MS.len();
    // (time of the later reading, |Δbpm|) for each successive heart-rate pair.
    let mut pairs: Vec<(i64, f64)> = Vec::new();
    let mut prev: Option<f32> = None;
    for e in events.iter().filter(|e| e.channel == Channel::HeartRate) {
        if let Some(p) = prev {
            pairs.push((i64::from(e.offset_ms), f64::from((e.value - p).abs())));
        }
        prev = Some(e.value);
    }
    let mut prefix = Vec::with_capacity(pairs.len() + 1);
    prefix.push(0.0);
    for &(_, d) in &pairs {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + d);
    }

    let mut values = vec![0.0; events.len() * k];
    let mut mask = vec![0.0; events.len() * k];
    let mut lo = [0usize; 4];
    let mut hi = 0usize;
    for (t, e) in events.iter().enumerate() {
        let now = i64::from(e.offset_ms);
        while hi < pairs.len() && pairs[hi].0 <= now {
            hi += 1;
        }
        for (w, &width) in HRV_WINDOWS_MS.iter().enumerate() {
            while lo[w] < hi && pairs[lo[w]].0 <= now - width {
                lo[w] += 1;
            }
            let n = hi - lo[w];
            if n > 0 {
                values[t * k + w] = (prefix[hi] - prefix[lo[w]]) / n as f64;
                mask[t * k + w] = 1.0;
            }
        }
    }
    HrvTargets { len: events.len(), values, mask }
}

/// [`hrv_targets_full`] sampled at the last event of every pooled block of
/// `2^pool_stages` timesteps, matching the model's output length.
pub fn hrv_targets(events: &[EventMeta], pool_stages: u32) -> HrvTargets {
    let full = hrv_targets_full(events);
    let k = HRV_WINDOWS_MS.len();
    let block = 1usize << pool_stages;
    let len = events.len().div_ceil(block);
    let mut values = Vec::with_capacity(len * k);
    let mut mask = Vec::with_capacity(len * k);
    for p in 0..len {
        let src = ((p + 1) * block).min(events.len()) - 1;
        values.extend_from_slice(&full.values[src * k..(src + 1) * k]);
        mask.extend_from_slice(&full.mask[src * k..(src + 1) * k]);
    }
    HrvTargets { len, values, mask }
}
