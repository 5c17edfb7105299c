//! Deterministic synthetic participants with planted HRV signatures.
//!
//! Each user's heart rate is an AR(1) process around a daily level
//! (sleep, awake, workouts, step bursts). Positive conditions scale the AR
//! innovation by their effect multiplier, so short-term variability (and
//! RMSSD) carries the diagnosis; hypertension additionally raises resting
//! heart rate. Steps and workouts are drawn independently of every
//! condition, so the step channel carries no diagnostic signal.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::biomarkers::global_stat;
use crate::biomarkers::Stat;
use crate::config::{ConfigError, KeyValues};
use crate::par;
use crate::sensorstream::{Channel, Diagnoses, Label, SensorRecord, DEFAULT_TASKS, WEEK_MS};
use crate::util::keyed_hash;

/// 2024-01-01T00:00:00Z, a Monday.
pub const DEFAULT_START_MS: i64 = 1_704_067_200_000;

const HOUR_MS: i64 = 3_600_000;
const DAY_MS: i64 = 24 * HOUR_MS;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub weeks_per_user: usize,
    pub seed: u64,
    pub start_ms: i64,
    /// Positive probability per task; also fixes the task list.
    pub prevalence: BTreeMap<String, f64>,
    /// HRV multiplier applied to positive users; missing tasks mean 1.0.
    pub effect_sizes: BTreeMap<String, f64>,
    pub hypertension_shift_bpm: f64,
    pub base_hr_mean: f64,
    pub base_hr_sd: f64,
    /// AR(1) innovation sd in bpm before condition scaling.
    pub base_variability: f64,
    pub ar_coef: f64,
    /// Log-sd of the per-user HRV scale.
    pub hrv_spread: f64,
    pub background_interval_s: f64,
    pub workout_interval_s: f64,
    pub workout_prob: f64,
    pub workout_boost_bpm: f64,
    pub sleep_drop_bpm: f64,
    /// Step bursts per awake hour at activity level 1.
    pub burst_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // The planted tasks act on the same variability, so a user with one
        // looks like a user with the other; lower prevalence keeps that
        // confusion from capping their AUC.
        let prevalence = DEFAULT_TASKS
            .iter()
            .map(|&t| (t.to_string(), if matches!(t, "diabetes" | "sleep_apnea") { 0.2 } else { 0.3 }))
            .collect();
        let effect_sizes = [("diabetes", 0.6), ("sleep_apnea", 0.6)].iter().map(|(t, e)| (t.to_string(), *e)).collect();
        Self {
            n_users: 500,
            weeks_per_user: 2,
            seed: 7,
            start_ms: DEFAULT_START_MS,
            prevalence,
            effect_sizes,
            hypertension_shift_bpm: 5.0,
            base_hr_mean: 62.0,
            base_hr_sd: 5.0,
            base_variability: 10.0,
            ar_coef: 0.5,
            hrv_spread: 0.05,
            background_interval_s: 300.0,
            workout_interval_s: 5.0,
            workout_prob: 0.4,
            workout_boost_bpm: 45.0,
            sleep_drop_bpm: 8.0,
            burst_rate: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn tasks(&self) -> Vec<String> {
        self.prevalence.keys().cloned().collect()
    }

    pub fn effect(&self, task: &str) -> f64 {
        self.effect_sizes.get(task).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (t, &p) in &self.prevalence {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::invalid(&format!("prevalence.{t}"), p, "must lie in [0, 1]"));
            }
        }
        for (t, &e) in &self.effect_sizes {
            if !(e > 0.0 && e.is_finite()) {
                return Err(ConfigError::invalid(&format!("effect.{t}"), e, "must be positive"));
            }
            if !self.prevalence.contains_key(t) {
                return Err(ConfigError::invalid(&format!("effect.{t}"), e, "task has no prevalence"));
            }
        }
        let positive = [
            ("background_interval_s", self.background_interval_s),
            ("workout_interval_s", self.workout_interval_s),
            ("base_variability", self.base_variability),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(k, v, "must be positive"));
            }
        }
        let non_negative = [
            ("base_hr_sd", self.base_hr_sd),
            ("hrv_spread", self.hrv_spread),
            ("burst_rate", self.burst_rate),
            ("workout_boost_bpm", self.workout_boost_bpm),
        ];
        for (k, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(k, v, "must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.workout_prob) {
            return Err(ConfigError::invalid("workout_prob", self.workout_prob, "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.ar_coef.abs()) {
            return Err(ConfigError::invalid("ar_coef", self.ar_coef, "|ar_coef| must be < 1"));
        }
        Ok(())
    }

    /// Reads every field from `kv`, consuming the keys it knows. Maps use
    /// `prevalence.<task>` and `effect.<task>`; giving any prevalence key
    /// replaces the default task list.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self, ConfigError> {
        let d = Self::default();
        let prevalence: BTreeMap<String, f64> = kv.take_prefixed("prevalence")?.into_iter().collect();
        let effects: BTreeMap<String, f64> = kv.take_prefixed("effect")?.into_iter().collect();
        let cfg = Self {
            n_users: kv.take_or("n_users", d.n_users)?,
            weeks_per_user: kv.take_or("weeks_per_user", d.weeks_per_user)?,
            seed: kv.take_or("seed", d.seed)?,
            start_ms: kv.take_or("start_ms", d.start_ms)?,
            prevalence: if prevalence.is_empty() { d.prevalence } else { prevalence },
            effect_sizes: if effects.is_empty() { d.effect_sizes } else { effects },
            hypertension_shift_bpm: kv.take_or("hypertension_shift_bpm", d.hypertension_shift_bpm)?,
            base_hr_mean: kv.take_or("base_hr_mean", d.base_hr_mean)?,
            base_hr_sd: kv.take_or("base_hr_sd", d.base_hr_sd)?,
            base_variability: kv.take_or("base_variability", d.base_variability)?,
            ar_coef: kv.take_or("ar_coef", d.ar_coef)?,
            hrv_spread: kv.take_or("hrv_spread", d.hrv_spread)?,
            background_interval_s: kv.take_or("background_interval_s", d.background_interval_s)?,
            workout_interval_s: kv.take_or("workout_interval_s", d.workout_interval_s)?,
            workout_prob: kv.take_or("workout_prob", d.workout_prob)?,
            workout_boost_bpm: kv.take_or("workout_boost_bpm", d.workout_boost_bpm)?,
            sleep_drop_bpm: kv.take_or("sleep_drop_bpm", d.sleep_drop_bpm)?,
            burst_rate: kv.take_or("burst_rate", d.burst_rate)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("n_users", self.n_users);
        kv.set("weeks_per_user", self.weeks_per_user);
        kv.set("seed", self.seed);
        kv.set("start_ms", self.start_ms);
        for (t, p) in &self.prevalence {
            kv.set(format!("prevalence.{t}"), p);
        }
        for (t, e) in &self.effect_sizes {
            kv.set(format!("effect.{t}"), e);
        }
        kv.set("hypertension_shift_bpm", self.hypertension_shift_bpm);
        kv.set("base_hr_mean", self.base_hr_mean);
        kv.set("base_hr_sd", self.base_hr_sd);
        kv.set("base_variability", self.base_variability);
        kv.set("ar_coef", self.ar_coef);
        kv.set("hrv_spread", self.hrv_spread);
        kv.set("background_interval_s", self.background_interval_s);
        kv.set("workout_interval_s", self.workout_interval_s);
        kv.set("workout_prob", self.workout_prob);
        kv.set("workout_boost_bpm", self.workout_boost_bpm);
        kv.set("sleep_drop_bpm", self.sleep_drop_bpm);
        kv.set("burst_rate", self.burst_rate);
        kv
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUser {
    pub user_id: String,
    pub conditions: BTreeMap<String, Label>,
    pub resting_hr: f64,
    pub hrv_scale: f64,
    pub activity_level: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthCohort {
    pub users: Vec<SynthUser>,
    /// Sorted by user, then time, heart rate before steps.
    pub records: Vec<SensorRecord>,
}

impl SynthCohort {
    pub fn labels(&self) -> Diagnoses {
        self.users.iter().map(|u| (u.user_id.clone(), u.conditions.clone())).collect()
    }

    pub fn write_records<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            writeln!(out, "{}", r.to_json_line())?;
        }
        out.flush()
    }

    /// `user_id,task,label` CSV.
    pub fn write_labels<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "task", "label"])?;
        for u in &self.users {
            for (task, label) in &u.conditions {
                w.write_record([u.user_id.as_str(), task.as_str(), if label.is_positive() { "1" } else { "-1" }])?;
            }
        }
        w.flush()
    }
}

pub fn user_id(index: usize) -> String {
    format!("u{index:05}")
}

/// Generates the cohort. Users are independent given their sub-seed, so the
/// parallel and sequential builds produce identical output.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<SynthCohort, ConfigError> {
    cfg.validate()?;
    let per_user = par::map_range(cfg.n_users, |i| generate_user(cfg, i));
    let mut cohort = SynthCohort::default();
    for (user, records) in per_user {
        cohort.users.push(user);
        cohort.records.extend(records);
    }
    Ok(cohort)
}

fn draw_user(cfg: &SynthConfig, id: String, rng: &mut ChaCha8Rng) -> SynthUser {
    let mut conditions = BTreeMap::new();
    let mut hrv = (cfg.hrv_spread * rng.sample::<f64, _>(StandardNormal)).exp();
    let mut resting = cfg.base_hr_mean + cfg.base_hr_sd * rng.sample::<f64, _>(StandardNormal);
    for (task, &p) in &cfg.prevalence {
        let positive = rng.gen_bool(p);
        if positive {
            hrv *= cfg.effect(task);
            if task == "hypertension" {
                resting += cfg.hypertension_shift_bpm;
            }
        }
        conditions.insert(task.clone(), if positive { Label::Positive } else { Label::Negative });
    }
    SynthUser { user_id: id, conditions, resting_hr: resting, hrv_scale: hrv, activity_level: rng.gen_range(0.5..1.5) }
}

/// Workout and step-burst intervals for one week, `[start, end)` in ms.
struct DaySchedule {
    workouts: Vec<(i64, i64)>,
    bursts: Vec<(i64, i64)>,
}

fn is_asleep(t: i64, start_ms: i64) -> bool {
    let hour = (t - start_ms).rem_euclid(DAY_MS) / HOUR_MS;
    !(7..23).contains(&hour)
}

fn schedule_week(cfg: &SynthConfig, user: &SynthUser, week_start: i64, rng: &mut ChaCha8Rng) -> DaySchedule {
    let mut workouts = Vec::new();
    let mut bursts = Vec::new();
    let p_workout = (cfg.workout_prob * user.activity_level).min(1.0);
    for day in 0..7 {
        let day_start = week_start + day * DAY_MS;
        if rng.gen_bool(p_workout) {
            let start = day_start + rng.gen_range(8 * HOUR_MS..20 * HOUR_MS);
            let minutes = rng.gen_range(35..=60);
            workouts.push((start, start + minutes * 60_000));
        }
        // Poisson count of bursts over the 16 awake hours.
        let lambda = cfg.burst_rate * user.activity_level * 16.0;
        let mut n = 0;
        let mut acc: f64 = rng.gen::<f64>();
        while acc > (-lambda).exp() {
            n += 1;
            acc *= rng.gen::<f64>();
        }
        for _ in 0..n {
            let start = day_start + rng.gen_range(7 * HOUR_MS..23 * HOUR_MS);
            let minutes = rng.gen_range(2..=10);
            let end = start + minutes * 60_000;
            if !workouts.iter().any(|&(a, b)| start < b && a < end) {
                bursts.push((start, end));
            }
        }
    }
    bursts.sort_unstable();
    DaySchedule { workouts, bursts }
}

fn ramp(t: i64, (a, b): (i64, i64), ramp_ms: i64) -> f64 {
    let up = (t - a) as f64 / ramp_ms as f64;
    let down = (b - t) as f64 / ramp_ms as f64;
    up.min(down).clamp(0.0, 1.0)
}

fn generate_user(cfg: &SynthConfig, index: usize) -> (SynthUser, Vec<SensorRecord>) {
    let id = user_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(keyed_hash(cfg.seed, "synth-user", &id));
    let user = draw_user(cfg, id, &mut rng);
    let innovation = Normal::new(0.0, cfg.base_variability * user.hrv_scale).expect("validated sd");
    let background_ms = cfg.background_interval_s * 1000.0;
    let workout_ms = (cfg.workout_interval_s * 1000.0).round().max(1.0) as i64;

    let mut records = Vec::new();
    let mut ar = 0.0;
    for week in 0..cfg.weeks_per_user {
        let week_start = cfg.start_ms + week as i64 * WEEK_MS;
        let week_end = week_start + WEEK_MS;
        let sched = schedule_week(cfg, &user, week_start, &mut rng);

        for &(a, b) in sched.workouts.iter().chain(&sched.bursts) {
            let cadence = if sched.workouts.contains(&(a, b)) { 150.0 } else { 90.0 };
            let mut t = a + 60_000;
            while t <= b {
                let steps = (cadence * user.activity_level * rng.gen_range(0.8..1.2)).round();
                records.push(SensorRecord { user_id: user.user_id.clone(), timestamp_ms: t, channel: Channel::StepCount, value: steps });
                t += 60_000;
            }
        }

        let mut t = week_start + rng.gen_range(0..background_ms as i64);
        while t < week_end {
            let workout = sched.workouts.iter().find(|&&(a, b)| a <= t && t < b).copied();
            let mut level = user.resting_hr;
            if is_asleep(t, cfg.start_ms) {
                level -= cfg.sleep_drop_bpm;
            }
            if let Some(w) = workout {
                level += cfg.workout_boost_bpm * user.activity_level.min(1.2) * ramp(t, w, 300_000);
            }
            if let Some(&b) = sched.bursts.iter().find(|&&(a, b)| a <= t && t < b) {
                level += 5.0 * ramp(t, b, 60_000);
            }
            ar = cfg.ar_coef * ar + innovation.sample(&mut rng);
            let bpm = (level + ar).round().clamp(30.0, 220.0);
            records.push(SensorRecord { user_id: user.user_id.clone(), timestamp_ms: t, channel: Channel::HeartRate, value: bpm });

            let next = match workout {
                Some(_) => t + workout_ms,
                None => {
                    let jitter = rng.gen_range(0.8..1.2);
                    let cand = t + (background_ms * jitter).round().max(1.0) as i64;
                    // Sampling switches to workout cadence as soon as one starts.
                    match sched.workouts.iter().find(|&&(a, _)| t < a && a < cand) {
                        Some(&(a, _)) => a,
                        None => cand,
                    }
                }
            };
            t = next;
        }
    }
    records.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    (user, records)
}

/// Minimum users per group before a separation is considered meaningful.
pub const MIN_GROUP_SIZE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSeparation {
    pub task: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub mean_rmssd_pos: f64,
    pub mean_rmssd_neg: f64,
    /// `(mean_neg − mean_pos) / pooled_sd`: positive when positives have
    /// lower RMSSD.
    pub smd: f64,
    pub too_small: bool,
}

impl TaskSeparation {
    pub fn ratio(&self) -> f64 {
        self.mean_rmssd_pos / self.mean_rmssd_neg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantReport {
    pub tasks: Vec<TaskSeparation>,
}

impl PlantReport {
    pub fn task(&self, name: &str) -> Option<&TaskSeparation> {
        self.tasks.iter().find(|t| t.task == name)
    }

    pub fn too_small(&self) -> bool {
        self.tasks.iter().any(|t| t.too_small)
    }
}

/// Per-user RMSSD over the full heart-rate stream, keyed by user.
pub fn user_rmssd(records: &[SensorRecord]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let mut start = 0;
    while start < records.len() {
        let mut end = start;
        while end < records.len() && records[end].user_id == records[start].user_id {
            end += 1;
        }
        let hr: Vec<f64> =
            records[start..end].iter().filter(|r| r.channel == Channel::HeartRate).map(|r| r.value).collect();
        if let Some(v) = global_stat(&hr, Stat::Rmssd) {
            out.insert(records[start].user_id.clone(), v);
        }
        start = end;
    }
    out
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let ss = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    (m, if v.len() > 1 { ss / (n - 1.0) } else { 0.0 })
}

/// Standardized RMSSD difference between negative and positive users, per
/// configured task.
pub fn plant_check(records: &[SensorRecord], labels: &Diagnoses, cfg: &SynthConfig) -> PlantReport {
    let rmssd = user_rmssd(records);
    let tasks = cfg
        .tasks()
        .into_iter()
        .map(|task| {
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for (user, &r) in &rmssd {
                match labels.get(user).and_then(|l| l.get(&task)) {
                    Some(Label::Positive) => pos.push(r),
                    Some(Label::Negative) => neg.push(r),
                    None => {}
                }
            }
            let too_small = pos.len() < MIN_GROUP_SIZE || neg.len() < MIN_GROUP_SIZE;
            let (mp, vp) = if pos.is_empty() { (f64::NAN, 0.0) } else { mean_var(&pos) };
            let (mn, vn) = if neg.is_empty() { (f64::NAN, 0.0) } else { mean_var(&neg) };
            let dof = (pos.len() + neg.len()).saturating_sub(2).max(1) as f64;
            let pooled = (((pos.len().max(1) - 1) as f64 * vp + (neg.len().max(1) - 1) as f64 * vn) / dof).sqrt();
            let smd = if too_small || pooled == 0.0 { f64::NAN } else { (mn - mp) / pooled };
            TaskSeparation {
                task,
                n_pos: pos.len(),
                n_neg: neg.len(),
                mean_rmssd_pos: mp,
                mean_rmssd_neg: mn,
                smd,
                too_small,
            }
        })
        .collect();
    PlantReport { tasks }
}
