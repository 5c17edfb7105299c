use std::collections::BTreeMap;

use crate::cache::TensorCache;
use crate::model::{ModelConfig, ParameterStore};
use crate::par;
use crate::sensorstream::Partition;
use crate::train::{pretrain_autoencoder, pretrain_heuristic, train_supervised, Ablation, Pretraining, TrainConfig};

use super::{evaluate, gather, roc_curve, score_weeks, EvalError, EvalReport, Level};

/// CSV cells must not carry commas or newlines.
fn cell(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub mode: Pretraining,
    pub seed: u64,
    pub level: Option<Level>,
    pub task: String,
    pub auc: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// `ok`, or the error that aborted the cell.
    pub status: String,
}

/// One row per evaluated task, plus one per task whose AUC was undefined.
fn report_rows<R>(report: &EvalReport, make: impl Fn(Option<Level>, String, Option<[f64; 3]>, &str) -> R) -> Vec<R> {
    let ok = report.tasks.iter().map(|t| make(Some(t.level), t.task.clone(), Some([t.auc, t.ci_low, t.ci_high]), "ok"));
    let skipped =
        report.skipped.iter().map(|(task, level, why)| make(Some(*level), task.clone(), None, &format!("undefined: {}", cell(why))));
    ok.chain(skipped).collect()
}

/// For each (fraction, mode, seed): pretrain (shared across fractions),
/// fine-tune on the label subset, evaluate on the full test split. Cells
/// run as independent jobs; a failed cell yields one row naming the error.
pub fn label_fraction_sweep(
    cache: &TensorCache,
    model: &ModelConfig,
    base: &TrainConfig,
    fractions: &[f64],
    modes: &[Pretraining],
    seeds: &[u64],
    n_boot: usize,
) -> Vec<SweepRow> {
    let pre_jobs: Vec<(Pretraining, u64)> =
        modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let pretrained = par::map_indexed(&pre_jobs, |_, &(mode, seed)| -> Result<Option<ParameterStore>, String> {
        let cfg = TrainConfig { seed, pretraining: mode, ..base.clone() };
        let r = match mode {
            Pretraining::None => return Ok(None),
            Pretraining::Autoencoder => pretrain_autoencoder(cache, model, &cfg),
            Pretraining::Heuristic => pretrain_heuristic(cache, model, &cfg),
        };
        r.map(|(s, _)| Some(s)).map_err(|e| e.to_string())
    });
    let pretrained: BTreeMap<(Pretraining, u64), Result<Option<ParameterStore>, String>> =
        pre_jobs.into_iter().zip(pretrained).collect();

    let mut jobs: Vec<(f64, Pretraining, u64)> = Vec::new();
    for &f in fractions {
        for &m in modes {
            for &s in seeds {
                jobs.push((f, m, s));
            }
        }
    }
    let results = par::map_indexed(&jobs, |_, &(fraction, mode, seed)| -> Result<EvalReport, String> {
        let init = pretrained[&(mode, seed)].as_ref().map_err(|e| format!("pretraining: {e}"))?;
        let cfg = TrainConfig { seed, pretraining: mode, label_fraction: fraction, ..base.clone() };
        let (store, _) = train_supervised(cache, model, &cfg, init.as_ref()).map_err(|e| e.to_string())?;
        evaluate(&store, cache, Partition::Test, cfg.ablation, n_boot, seed).map_err(|e| e.to_string())
    });

    let mut rows = Vec::new();
    for (&(fraction, mode, seed), r) in jobs.iter().zip(results) {
        let make = |level, task, v: Option<[f64; 3]>, status: &str| SweepRow {
            fraction,
            mode,
            seed,
            level,
            task,
            auc: v.map(|v| v[0]),
            ci_low: v.map(|v| v[1]),
            ci_high: v.map(|v| v[2]),
            status: status.to_string(),
        };
        match r {
            Ok(report) => rows.extend(report_rows(&report, make)),
            Err(e) => {
                log::warn!("sweep cell fraction={fraction} mode={mode} seed={seed} failed: {e}");
                rows.push(make(None, String::new(), None, &format!("failed: {}", cell(&e))));
            }
        }
    }
    rows.sort_by(|a, b| {
        (a.fraction, a.mode, a.seed, a.level, &a.task)
            .partial_cmp(&(b.fraction, b.mode, b.seed, b.level, &b.task))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows
}

pub const SWEEP_HEADER: &str = "fraction,mode,seed,level,task,auc,ci_low,ci_high,status";

pub fn sweep_csv(rows: &[SweepRow]) -> Vec<String> {
    let mut out = vec![SWEEP_HEADER.to_string()];
    for r in rows {
        out.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            r.fraction,
            r.mode,
            r.seed,
            r.level.map(|l| l.to_string()).unwrap_or_default(),
            r.task,
            fmt_opt(r.auc),
            fmt_opt(r.ci_low),
            fmt_opt(r.ci_high),
            r.status
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mode: Ablation,
    pub seed: u64,
    pub level: Option<Level>,
    pub task: String,
    pub auc: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// AUC minus the `all` AUC of the same seed, level and task.
    pub delta_vs_all: Option<f64>,
    pub status: String,
}

/// Trains and evaluates one model per (input mode, seed), each seeing the
/// same channels at training and test time.
pub fn channel_ablation(
    cache: &TensorCache,
    model: &ModelConfig,
    base: &TrainConfig,
    modes: &[Ablation],
    seeds: &[u64],
    n_boot: usize,
) -> Vec<AblationRow> {
    let jobs: Vec<(Ablation, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let results = par::map_indexed(&jobs, |_, &(ablation, seed)| -> Result<EvalReport, String> {
        let cfg = TrainConfig { seed, ablation, ..base.clone() };
        let (store, _) = crate::train::train_pipeline(cache, model, &cfg).map_err(|e| e.to_string())?;
        evaluate(&store, cache, Partition::Test, ablation, n_boot, seed).map_err(|e| e.to_string())
    });
    let mut rows = Vec::new();
    for (&(mode, seed), r) in jobs.iter().zip(results) {
        let make = |level, task, v: Option<[f64; 3]>, status: &str| AblationRow {
            mode,
            seed,
            level,
            task,
            auc: v.map(|v| v[0]),
            ci_low: v.map(|v| v[1]),
            ci_high: v.map(|v| v[2]),
            delta_vs_all: None,
            status: status.to_string(),
        };
        match r {
            Ok(report) => rows.extend(report_rows(&report, make)),
            Err(e) => {
                log::warn!("ablation cell mode={mode} seed={seed} failed: {e}");
                rows.push(make(None, String::new(), None, &format!("failed: {}", cell(&e))));
            }
        }
    }
    let all: BTreeMap<(u64, Option<Level>, String), f64> = rows
        .iter()
        .filter(|r| r.mode == Ablation::All)
        .filter_map(|r| r.auc.map(|a| ((r.seed, r.level, r.task.clone()), a)))
        .collect();
    for r in &mut rows {
        if let (Some(a), Some(base)) = (r.auc, all.get(&(r.seed, r.level, r.task.clone()))) {
            r.delta_vs_all = Some(a - base);
        }
    }
    rows.sort_by(|a, b| (a.mode, a.seed, a.level, &a.task).cmp(&(b.mode, b.seed, b.level, &b.task)));
    rows
}

pub const ABLATION_HEADER: &str = "mode,seed,level,task,auc,ci_low,ci_high,delta_vs_all,status";

pub fn ablation_csv(rows: &[AblationRow]) -> Vec<String> {
    let mut out = vec![ABLATION_HEADER.to_string()];
    for r in rows {
        out.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            r.mode,
            r.seed,
            r.level.map(|l| l.to_string()).unwrap_or_default(),
            r.task,
            fmt_opt(r.auc),
            fmt_opt(r.ci_low),
            fmt_opt(r.ci_high),
            fmt_opt(r.delta_vs_all),
            r.status
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub config: ModelConfig,
    /// Week-level tune AUC per task; `None` where a task lacks both classes.
    pub aucs: Vec<Option<f64>>,
    /// Mean of the defined task AUCs.
    pub average: Option<f64>,
    pub status: String,
}

fn tune_aucs(cache: &TensorCache, model: &ModelConfig, cfg: &TrainConfig) -> Result<Vec<Option<f64>>, EvalError> {
    let (store, _) = crate::train::train_pipeline(cache, model, cfg)?;
    let weeks = score_weeks(&store, cache, Partition::Tune, cfg.ablation)?;
    Ok((0..model.tasks.len())
        .map(|k| {
            let (s, l, _) = gather(&weeks, k, Level::Week);
            roc_curve(&s, &l).ok().map(|r| r.auc)
        })
        .collect())
}

/// Trains every configuration with the same seed and scores it on the tune
/// split. A failing cell is recorded and the run continues.
pub fn grid_runner(cache: &TensorCache, configs: &[ModelConfig], base: &TrainConfig) -> Vec<GridRow> {
    par::map_indexed(configs, |_, model| match tune_aucs(cache, model, base) {
        Ok(aucs) => {
            let defined: Vec<f64> = aucs.iter().flatten().copied().collect();
            let average = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            GridRow { config: model.clone(), aucs, average, status: "ok".into() }
        }
        Err(e) => {
            log::warn!("grid cell {} failed: {e}", model.canonical().replace('\n', " "));
            GridRow {
                config: model.clone(),
                aucs: vec![None; model.tasks.len()],
                average: None,
                status: format!("failed: {}", cell(&e.to_string())),
            }
        }
    })
}

pub fn grid_csv(tasks: &[String], rows: &[GridRow]) -> Vec<String> {
    let mut out = vec![format!("width,conv_depth,lstm_depth,initial_filter,{},average,status", tasks.join(","))];
    for r in rows {
        let c = &r.config;
        let aucs: Vec<String> = r.aucs.iter().map(|&a| fmt_opt(a)).collect();
        out.push(format!(
            "{},{},{},{},{},{},{}",
            c.width,
            c.conv_depth,
            c.lstm_depth,
            c.initial_filter,
            aucs.join(","),
            fmt_opt(r.average),
            r.status
        ));
    }
    out
}
