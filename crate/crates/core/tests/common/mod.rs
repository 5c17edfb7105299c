#![allow(dead_code)]

use std::collections::BTreeMap;

use deepheart::cache::{build_cache, TensorCache};
use deepheart::model::ModelConfig;
use deepheart::sensorstream::{Channel, Diagnoses, NormalizationParams, SensorRecord, SplitFractions};
use deepheart::synthcohort::{generate_cohort, SynthConfig};

pub const MONDAY: i64 = 1_704_067_200_000;

pub fn tasks() -> Vec<String> {
    SynthConfig::default().tasks()
}

/// A small generated cohort, one week per user, truncated to `max_events`.
pub fn synth_cache(n_users: usize, seed: u64, max_events: usize) -> TensorCache {
    let cfg = SynthConfig { n_users, weeks_per_user: 1, seed, ..SynthConfig::default() };
    let cohort = generate_cohort(&cfg).unwrap();
    build_cache(
        &cohort.records,
        &cohort.labels(),
        &cfg.tasks(),
        NormalizationParams::default(),
        seed,
        SplitFractions::default(),
        max_events,
    )
    .unwrap()
    .0
}

/// Users whose heart rate reads exactly `bpm` every 10 s for two hours:
/// enough records and continuity to pass the week filter.
pub fn constant_cache(n_users: usize, bpm: f64, max_events: usize) -> TensorCache {
    let mut records = Vec::new();
    for u in 0..n_users {
        for i in 0..720 {
            records.push(SensorRecord {
                user_id: format!("c{u:03}"),
                timestamp_ms: MONDAY + 3_600_000 + i * 10_000,
                channel: Channel::HeartRate,
                value: bpm,
            });
        }
    }
    let diagnoses: Diagnoses = BTreeMap::new();
    build_cache(
        &records,
        &diagnoses,
        &tasks(),
        NormalizationParams::default(),
        0,
        SplitFractions::new(1.0, 0.0, 0.0).unwrap(),
        max_events,
    )
    .unwrap()
    .0
}

pub fn tiny_model(width: usize, conv_depth: usize, lstm_depth: usize, filter: usize) -> ModelConfig {
    ModelConfig { tasks: tasks(), ..ModelConfig::new(width, conv_depth, lstm_depth, filter) }
}
