//! ROC analysis with bootstrap intervals, and the experiment harnesses:
//! label-fraction sweep, channel ablation and the hyperparameter grid.
//!
//! Week scores are read at the single labeled output timestep. Reports
//! carry two aggregation levels: every person-week, and one score per user
//! (the mean of their week scores). Bootstrap resampling is always by user.

mod baseline;
mod harness;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;

use crate::autodiff::Tape;
use crate::cache::TensorCache;
use crate::model::{ModelKind, ParameterStore};
use crate::par;
use crate::sensorstream::{Label, Partition};
use crate::train::{build_examples, Ablation, TrainError};

pub use baseline::{cache_features, run_baselines, FeatureRow};
pub use harness::{
    ablation_csv, channel_ablation, grid_csv, grid_runner, label_fraction_sweep, sweep_csv, AblationRow, GridRow,
    SweepRow, ABLATION_HEADER, SWEEP_HEADER,
};
pub use metrics::{bootstrap_ci, bootstrap_ci_clustered, c_statistic, roc_curve, BootstrapCi, RocCurve, RocPoint};

pub const DEFAULT_BOOTSTRAP: usize = 1000;
pub const CI_LEVEL: f64 = 0.95;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("c-statistic undefined: {pos} positive and {neg} negative labels")]
    SingleClass { pos: usize, neg: usize },
    #[error("bootstrap degenerate: {redrawn} single-class resamples against {kept} usable (too few positives)")]
    DegenerateBootstrap { redrawn: usize, kept: usize },
    #[error("expected a deepheart model, got {0}")]
    WrongModel(&'static str),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Week,
    User,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Week => "week",
            Level::User => "user",
        })
    }
}

/// Model scores for one person-week, one per task.
#[derive(Clone, Debug, PartialEq)]
pub struct WeekScore {
    pub user_id: String,
    pub week_start_ms: i64,
    pub scores: Vec<f64>,
    pub labels: Vec<Option<Label>>,
}

/// Runs the model in evaluation mode over every week of `split`.
pub fn score_weeks(
    store: &ParameterStore,
    cache: &TensorCache,
    split: Partition,
    ablation: Ablation,
) -> Result<Vec<WeekScore>, EvalError> {
    if store.kind() != ModelKind::DeepHeart {
        return Err(EvalError::WrongModel(store.kind().as_str()));
    }
    let cfg = store.config();
    let examples = build_examples(cache, cfg, ablation, false, |w| w.split == split)?;
    let scored = par::map_indexed(&examples, |_, ex| -> Result<WeekScore, TrainError> {
        let mut tape = Tape::<f32>::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(ex.x.clone());
        let out = cfg.deepheart(&mut tape, &p, x, None).map_err(TrainError::from)?;
        let last = tape.value(out).rows() - 1;
        let scores = tape.value(out).row(last).iter().map(|&v| f64::from(v)).collect();
        Ok(WeekScore { user_id: ex.user_id.clone(), week_start_ms: ex.week_start_ms, scores, labels: ex.labels.clone() })
    });
    Ok(scored.into_iter().collect::<Result<Vec<_>, _>>()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskReport {
    pub task: String,
    pub level: Level,
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub roc: RocCurve,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub tasks: Vec<TaskReport>,
    /// (task, level, reason) for every task whose AUC is undefined.
    pub skipped: Vec<(String, Level, String)>,
}

impl EvalReport {
    pub fn get(&self, task: &str, level: Level) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task && t.level == level)
    }

    pub const CSV_HEADER: &'static str = "model,level,task,auc,ci_low,ci_high,n_pos,n_neg";

    pub fn csv_rows(&self, model: &str) -> Vec<String> {
        self.tasks
            .iter()
            .map(|t| {
                format!(
                    "{model},{},{},{:.6},{:.6},{:.6},{},{}",
                    t.level, t.task, t.auc, t.ci_low, t.ci_high, t.n_pos, t.n_neg
                )
            })
            .collect()
    }

    pub const ROC_HEADER: &'static str = "level,task,fpr,tpr,threshold";

    pub fn roc_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for t in &self.tasks {
            for p in &t.roc.points {
                rows.push(format!("{},{},{:.6},{:.6},{}", t.level, t.task, p.fpr, p.tpr, p.threshold));
            }
        }
        rows
    }
}

/// `(scores, labels, user cluster ids)` for one task at one level.
fn gather(weeks: &[WeekScore], task: usize, level: Level) -> (Vec<f64>, Vec<bool>, Vec<usize>) {
    let mut users: BTreeMap<&str, (f64, usize, bool)> = BTreeMap::new();
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for w in weeks {
        let Some(label) = w.labels[task] else { continue };
        let next = ids.len();
        let cluster = *ids.entry(&w.user_id).or_insert(next);
        match level {
            Level::Week => {
                out.0.push(w.scores[task]);
                out.1.push(label.is_positive());
                out.2.push(cluster);
            }
            Level::User => {
                let e = users.entry(&w.user_id).or_insert((0.0, 0, label.is_positive()));
                e.0 += w.scores[task];
                e.1 += 1;
            }
        }
    }
    for (i, (_, (sum, n, pos))) in users.into_iter().enumerate() {
        out.0.push(sum / n as f64);
        out.1.push(pos);
        out.2.push(i);
    }
    out
}

/// Per-task ROC, c-statistic and user-resampled bootstrap CI at both
/// levels. Tasks lacking either class (or too few for a bootstrap) are
/// left out with a warning.
pub fn evaluate_scores(tasks: &[String], weeks: &[WeekScore], n_boot: usize, seed: u64) -> EvalReport {
    let mut report = EvalReport::default();
    for level in [Level::Week, Level::User] {
        for (k, task) in tasks.iter().enumerate() {
            let (s, l, c) = gather(weeks, k, level);
            let roc = match roc_curve(&s, &l) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{task} ({level}): {e}");
                    report.skipped.push((task.clone(), level, e.to_string()));
                    continue;
                }
            };
            let ci_seed = crate::util::keyed_hash(seed, "bootstrap", &format!("{level}/{task}"));
            let ci = match bootstrap_ci_clustered(&s, &l, &c, n_boot, CI_LEVEL, ci_seed) {
                Ok(ci) => ci,
                Err(e) => {
                    log::warn!("{task} ({level}): {e}");
                    report.skipped.push((task.clone(), level, e.to_string()));
                    continue;
                }
            };
            let n_pos = l.iter().filter(|&&v| v).count();
            report.tasks.push(TaskReport {
                task: task.clone(),
                level,
                auc: roc.auc,
                ci_low: ci.low,
                ci_high: ci.high,
                n_pos,
                n_neg: l.len() - n_pos,
                roc,
            });
        }
    }
    report
}

/// Scores `split` with `store` and evaluates it.
pub fn evaluate(
    store: &ParameterStore,
    cache: &TensorCache,
    split: Partition,
    ablation: Ablation,
    n_boot: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let weeks = score_weeks(store, cache, split, ablation)?;
    Ok(evaluate_scores(&store.config().tasks, &weeks, n_boot, seed))
}
