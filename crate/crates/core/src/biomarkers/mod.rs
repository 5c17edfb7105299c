//! Hand-engineered heart-rate biomarkers: the 13-feature baseline vector and
//! the windowed successive-difference targets used for heuristic
//! pretraining.

mod hrv;
mod stats;

pub use hrv::{hrv_targets, hrv_targets_full, HrvTargets, HRV_WINDOWS_MS};
pub use stats::{
    diff_entropy, global_stat, percentile, population_sd, resample_1hz, resting_hr, rmssd, spectral_entropy,
    windowed_stat, HrSample, Stat,
};

pub const FEATURE_COUNT: usize = 13;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "resting_hr",
    "mean_hr_5m",
    "mean_hr_30m",
    "sd_hr_5m",
    "sd_hr_30m",
    "spec_entropy_5m",
    "spec_entropy_30m",
    "rmssd_5m",
    "rmssd_30m",
    "diff_entropy_5m",
    "diff_entropy_30m",
    "sd_hr_global",
    "rmssd_global",
];

const SHORT_WINDOW_S: u32 = 300;
const LONG_WINDOW_S: u32 = 1800;

/// Features for one week; `None` where a feature is undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFeatures(pub [Option<f64>; FEATURE_COUNT]);

/// Complete feature vector after imputation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

/// Computes all 13 features from a week's heart-rate samples. Windows are
/// aligned to `origin_ms` (the week start).
pub fn feature_vector(samples: &[HrSample], origin_ms: i64) -> RawFeatures {
    let bpm: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let w = |secs, stat| windowed_stat(samples, origin_ms, secs, stat);
    RawFeatures([
        resting_hr(&bpm),
        w(SHORT_WINDOW_S, Stat::Mean),
        w(LONG_WINDOW_S, Stat::Mean),
        w(SHORT_WINDOW_S, Stat::Sd),
        w(LONG_WINDOW_S, Stat::Sd),
        w(SHORT_WINDOW_S, Stat::SpecEntropy),
        w(LONG_WINDOW_S, Stat::SpecEntropy),
        w(SHORT_WINDOW_S, Stat::Rmssd),
        w(LONG_WINDOW_S, Stat::Rmssd),
        w(SHORT_WINDOW_S, Stat::DiffEntropy),
        w(LONG_WINDOW_S, Stat::DiffEntropy),
        global_stat(&bpm, Stat::Sd),
        global_stat(&bpm, Stat::Rmssd),
    ])
}

/// Replaces undefined features with the mean of the training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Imputer {
    pub means: [f64; FEATURE_COUNT],
    /// Per feature, how many training rows were undefined.
    pub missing: [usize; FEATURE_COUNT],
}

impl Imputer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a RawFeatures>) -> Self {
        let mut sums = [0.0; FEATURE_COUNT];
        let mut counts = [0usize; FEATURE_COUNT];
        let mut missing = [0usize; FEATURE_COUNT];
        for row in rows {
            for (i, v) in row.0.iter().enumerate() {
                match v {
                    Some(v) => {
                        sums[i] += v;
                        counts[i] += 1;
                    }
                    None => missing[i] += 1,
                }
            }
        }
        let mut means = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            if counts[i] > 0 {
                means[i] = sums[i] / counts[i] as f64;
            }
        }
        Self { means, missing }
    }

    pub fn apply(&self, raw: &RawFeatures) -> FeatureVector {
        let mut out = [0.0; FEATURE_COUNT];
        for (i, v) in raw.0.iter().enumerate() {
            out[i] = v.unwrap_or(self.means[i]);
        }
        FeatureVector(out)
    }
}
