use std::collections::BTreeMap;

use crate::biomarkers::{feature_vector, Imputer, RawFeatures, FEATURE_COUNT, FEATURE_NAMES};
use crate::cache::TensorCache;
use crate::model::baselines::{BaselineError, LogisticModel, MlpConfig, MlpModel, Standardizer, LOGISTIC_L2};
use crate::par;
use crate::sensorstream::{Label, Partition};

use super::{evaluate_scores, EvalReport, WeekScore};

/// Raw features of one cached week.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub user_id: String,
    pub week_start_ms: i64,
    pub split: Partition,
    pub raw: RawFeatures,
    /// One entry per cache task; `None` where the diagnosis is unknown.
    pub labels: Vec<Option<Label>>,
}

impl FeatureRow {
    pub fn csv_header(tasks: &[String]) -> String {
        let mut s = format!("user_id,week_start_ms,split,{}", FEATURE_NAMES.join(","));
        for t in tasks {
            s.push(',');
            s.push_str(t);
        }
        s
    }

    /// Undefined features and unknown labels are empty cells.
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{},{}", self.user_id, self.week_start_ms, self.split.as_str());
        for v in &self.raw.0 {
            s.push(',');
            if let Some(v) = v {
                s.push_str(&format!("{v:.9}"));
            }
        }
        for l in &self.labels {
            s.push(',');
            if let Some(l) = l {
                s.push_str(if l.is_positive() { "1" } else { "-1" });
            }
        }
        s
    }

    pub fn parse_csv_row(line: &str, n_tasks: usize) -> Result<Self, String> {
        let cells: Vec<&str> = line.split(',').collect();
        let want = 3 + FEATURE_COUNT + n_tasks;
        if cells.len() != want {
            return Err(format!("expected {want} columns, got {}", cells.len()));
        }
        let split = match cells[2] {
            "train" => Partition::Train,
            "tune" => Partition::Tune,
            "test" => Partition::Test,
            s => return Err(format!("unknown split {s:?}")),
        };
        let mut raw = [None; FEATURE_COUNT];
        for (i, c) in cells[3..3 + FEATURE_COUNT].iter().enumerate() {
            if !c.is_empty() {
                raw[i] = Some(c.parse::<f64>().map_err(|e| format!("{}: {e}", FEATURE_NAMES[i]))?);
            }
        }
        let labels = cells[3 + FEATURE_COUNT..]
            .iter()
            .map(|c| match *c {
                "" => Ok(None),
                c => c.parse::<i64>().ok().and_then(Label::from_sign).map(Some).ok_or(format!("bad label {c:?}")),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            user_id: cells[0].to_string(),
            week_start_ms: cells[1].parse().map_err(|e| format!("week_start_ms: {e}"))?,
            split,
            raw: RawFeatures(raw),
            labels,
        })
    }
}

/// Features of every cached week, computed from its encoded heart-rate
/// events with windows aligned to the week start.
pub fn cache_features(cache: &TensorCache) -> Vec<FeatureRow> {
    par::map_indexed(&cache.weeks, |_, cw| FeatureRow {
        user_id: cw.week.user_id.clone(),
        week_start_ms: cw.week.week_start_ms,
        split: cw.split,
        raw: feature_vector(&cw.week.heart_rate_series(), cw.week.week_start_ms),
        labels: cw.labels.clone(),
    })
}

struct Prepared {
    rows: Vec<(Partition, Vec<f64>, Vec<Option<Label>>, String, i64)>,
}

fn prepare(cache: &TensorCache, features: &[FeatureRow]) -> Prepared {
    let labels: BTreeMap<(&str, i64), &Vec<Option<Label>>> =
        cache.weeks.iter().map(|w| ((w.week.user_id.as_str(), w.week.week_start_ms), &w.labels)).collect();
    let imputer = Imputer::fit(features.iter().filter(|f| f.split == Partition::Train).map(|f| &f.raw));
    let mut rows = Vec::new();
    for f in features {
        let Some(l) = labels.get(&(f.user_id.as_str(), f.week_start_ms)) else {
            log::warn!("feature row {}@{} has no cached week", f.user_id, f.week_start_ms);
            continue;
        };
        rows.push((f.split, imputer.apply(&f.raw).0.to_vec(), (*l).clone(), f.user_id.clone(), f.week_start_ms));
    }
    let std = Standardizer::fit(&rows.iter().filter(|r| r.0 == Partition::Train).map(|r| r.1.clone()).collect::<Vec<_>>());
    for r in &mut rows {
        r.1 = std.apply(&r.1);
    }
    Prepared { rows }
}

fn xy(p: &Prepared, split: Partition, task: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    p.rows
        .iter()
        .filter(|r| r.0 == split)
        .filter_map(|r| r.2[task].map(|l| (r.1.clone(), l.is_positive())))
        .unzip()
}

/// Fits logistic regression and the MLP per task on the training split
/// (MLP early-stopped on tune) and evaluates both on the test split.
pub fn run_baselines(
    cache: &TensorCache,
    features: &[FeatureRow],
    seed: u64,
    n_boot: usize,
) -> Vec<(String, EvalReport)> {
    let p = prepare(cache, features);
    let tasks = &cache.header.tasks;
    let test: Vec<&(Partition, Vec<f64>, Vec<Option<Label>>, String, i64)> =
        p.rows.iter().filter(|r| r.0 == Partition::Test).collect();
    let mut out = Vec::new();
    for model in ["logistic", "mlp"] {
        let mut weeks: Vec<WeekScore> = test
            .iter()
            .map(|r| WeekScore { user_id: r.3.clone(), week_start_ms: r.4, scores: vec![0.0; tasks.len()], labels: r.2.clone() })
            .collect();
        for (k, task) in tasks.iter().enumerate() {
            let (x, y) = xy(&p, Partition::Train, k);
            let fitted: Result<Box<dyn Fn(&[f64]) -> f64>, BaselineError> = match model {
                "logistic" => LogisticModel::fit(&x, &y, LOGISTIC_L2).map(|m| Box::new(move |r: &[f64]| m.predict(r)) as _),
                _ => {
                    let (tx, ty) = xy(&p, Partition::Tune, k);
                    let cfg = MlpConfig { seed: crate::util::keyed_hash(seed, "mlp", task), ..MlpConfig::default() };
                    MlpModel::fit(&x, &y, &tx, &ty, &cfg).map(|m| Box::new(move |r: &[f64]| m.predict(r)) as _)
                }
            };
            match fitted {
                Ok(f) => {
                    for (w, r) in weeks.iter_mut().zip(&test) {
                        w.scores[k] = f(&r.1);
                    }
                }
                Err(e) => {
                    log::warn!("{model} baseline skips {task}: {e}");
                    weeks.iter_mut().for_each(|w| w.labels[k] = None);
                }
            }
        }
        out.push((model.to_string(), evaluate_scores(tasks, &weeks, n_boot, seed)));
    }
    out
}
