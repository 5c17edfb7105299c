use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// `(timestamp_ms, bpm)`, sorted by time.
pub type HrSample = (i64, f64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stat {
    Mean,
    Sd,
    Rmssd,
    DiffEntropy,
    SpecEntropy,
}

/// Linear-interpolated percentile (`rank = q · (n − 1)`), `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// 5th percentile of the week's heart rate; needs at least 10 readings.
pub fn resting_hr(bpm: &[f64]) -> Option<f64> {
    if bpm.len() < 10 {
        return None;
    }
    percentile(bpm, 0.05)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn population_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn rmssd(v: &[f64]) -> f64 {
    let sq: f64 = v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    (sq / (v.len() - 1) as f64).sqrt()
}

/// Shannon entropy (nats) of a histogram.
fn entropy_of_counts<I: IntoIterator<Item = f64>>(counts: I) -> f64 {
    let counts: Vec<f64> = counts.into_iter().filter(|&c| c > 0.0).collect();
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -counts.iter().map(|&c| (c / total) * (c / total).ln()).sum::<f64>()
}

/// Entropy of successive differences binned to the nearest whole bpm.
pub fn diff_entropy(v: &[f64]) -> f64 {
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for w in v.windows(2) {
        *bins.entry((w[1] - w[0]).round() as i64).or_default() += 1;
    }
    entropy_of_counts(bins.values().map(|&c| c as f64))
}

/// Linear interpolation onto a 1 Hz grid starting at the first sample.
pub fn resample_1hz(samples: &[HrSample]) -> Vec<f64> {
    let Some(&(t0, _)) = samples.first() else { return Vec::new() };
    let t_last = samples[samples.len() - 1].0;
    let n = ((t_last - t0) / 1000) as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t0 + k as i64 * 1000;
        while j + 1 < samples.len() && samples[j + 1].0 < t {
            j += 1;
        }
        let (ta, va) = samples[j];
        let v = match samples.get(j + 1) {
            Some(&(tb, vb)) if tb > ta && t >= ta => va + (vb - va) * (t - ta) as f64 / (tb - ta) as f64,
            _ => va,
        };
        out.push(v);
    }
    out
}

/// Entropy (nats) of the normalized periodogram of the mean-removed series
/// over bins `1..=n/2`. `None` when there are no non-DC bins.
pub fn spectral_entropy(series: &[f64], planner: &mut FftPlanner<f64>) -> Option<f64> {
    let n = series.len();
    if n < 2 {
        return None;
    }
    let m = mean(series);
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v - m, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    Some(entropy_of_counts(buf[1..=n / 2].iter().map(|c| c.norm_sqr())))
}

fn window_stat(samples: &[HrSample], stat: Stat, planner: &mut FftPlanner<f64>) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let v: Vec<f64> = samples.iter().map(|s| s.1).collect();
    match stat {
        Stat::Mean => Some(mean(&v)),
        Stat::Sd => Some(population_sd(&v)),
        Stat::Rmssd => Some(rmssd(&v)),
        Stat::DiffEntropy => Some(diff_entropy(&v)),
        Stat::SpecEntropy => spectral_entropy(&resample_1hz(samples), planner),
    }
}

/// Splits the week into consecutive `window_s` windows counted from
/// `origin_ms`, evaluates `stat` in every window holding at least two
/// samples, and averages over those windows.
pub fn windowed_stat(samples: &[HrSample], origin_ms: i64, window_s: u32, stat: Stat) -> Option<f64> {
    let width = i64::from(window_s) * 1000;
    let mut planner = FftPlanner::new();
    let mut total = 0.0;
    let mut used = 0usize;
    let mut start = 0;
    while start < samples.len() {
        let idx = (samples[start].0 - origin_ms).div_euclid(width);
        let mut end = start + 1;
        while end < samples.len() && (samples[end].0 - origin_ms).div_euclid(width) == idx {
            end += 1;
        }
        if let Some(v) = window_stat(&samples[start..end], stat, &mut planner) {
            total += v;
            used += 1;
        }
        start = end;
    }
    (used > 0).then(|| total / used as f64)
}

/// Whole-week `Sd` or `Rmssd`; other stats are windowed only.
pub fn global_stat(bpm: &[f64], stat: Stat) -> Option<f64> {
    if bpm.len() < 2 {
        return None;
    }
    match stat {
        Stat::Sd => Some(population_sd(bpm)),
        Stat::Rmssd => Some(rmssd(bpm)),
        _ => None,
    }
}
