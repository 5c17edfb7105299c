use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use deepheart::cache::{build_cache, TensorCache};
use deepheart::checkpoint::{expect_kind, load_checkpoint, save_checkpoint};
use deepheart::config::{ConfigError, KeyValues};
use deepheart::eval::{
    ablation_csv, cache_features, channel_ablation, evaluate, grid_csv, grid_runner, label_fraction_sweep,
    run_baselines, sweep_csv, EvalReport, FeatureRow,
};
use deepheart::model::{table3_grid, ModelConfig, ModelKind};
use deepheart::sensorstream::{
    parse_labels, parse_records, NormalizationParams, Partition, SplitFractions, DEFAULT_TASKS, MAX_TIMESTEPS,
};
use deepheart::synthcohort::{generate_cohort, plant_check};
use deepheart::train::{
    pretrain_autoencoder, pretrain_heuristic, train_pipeline, train_supervised, Ablation, Pretraining, TrainConfig,
    TrainLog,
};
use deepheart::util::write_atomic;

use crate::manifest::{csv_text, RunManifest};
use crate::settings::Settings;
use crate::{
    AblateArgs, BaselinesArgs, EncodeArgs, EvaluateArgs, Failure, FeaturesArgs, GenerateArgs, GridArgs, PretrainArgs,
    SweepArgs, TrainArgs,
};

const DEFAULT_N_BOOT: usize = 1000;
const TRAIN_LOG_HEADER: &str = "phase,epoch,train_loss,tune_loss";

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::data(path.display(), e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(|e| Failure::data(path.display(), e))
}

fn load_cache(path: &Path) -> Result<(TensorCache, Vec<u8>), Failure> {
    let bytes = read(path)?;
    let cache = TensorCache::from_bytes(&bytes).map_err(|e| Failure::data(path.display(), e))?;
    if cache.weeks.is_empty() {
        return Err(Failure::Data(format!("{}: cache holds no weeks", path.display())));
    }
    Ok((cache, bytes))
}

fn parse_list<T: FromStr>(flag: &str, s: &str) -> Result<Vec<T>, Failure>
where
    T::Err: Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| Failure::Usage(format!("--{flag}: {e}"))))
        .collect()
}

fn parse_split(s: &str) -> Result<Partition, Failure> {
    [Partition::Train, Partition::Tune, Partition::Test]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| Failure::Usage(format!("--split: unknown split {s:?}")))
}

fn seed_list(base: u64, n: usize) -> Result<Vec<u64>, Failure> {
    if n == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    Ok((0..n as u64).map(|i| base + i).collect())
}

/// Cache input plus resolved model and training settings.
fn training_setup(
    settings: &Settings,
    manifest: &mut RunManifest,
    cache_path: &Path,
) -> Result<(TensorCache, ModelConfig, TrainConfig), Failure> {
    let (cache, bytes) = load_cache(cache_path)?;
    let model = settings.model(&cache.header.tasks)?;
    let train = settings.train()?;
    settings.check_unknown()?;
    manifest.input("cache", cache_path, &bytes);
    let mut cfg = model.to_kv();
    cfg.merge(&train.to_kv());
    manifest.config(&cfg);
    manifest.cache_labels(&cache);
    Ok((cache, model, train))
}

fn n_boot(settings: &Settings, flag: Option<usize>) -> Result<usize, Failure> {
    let n = match flag {
        Some(n) => n,
        None => settings.value("n_boot", DEFAULT_N_BOOT)?,
    };
    if n == 0 {
        return Err(Failure::Usage("n_boot must be at least 1".into()));
    }
    Ok(n)
}

fn train_log_csv(hash: &str, logs: &[TrainLog]) -> String {
    let rows: Vec<String> = logs.iter().flat_map(TrainLog::csv_rows).collect();
    csv_text(hash, TRAIN_LOG_HEADER, &rows)
}

/// Harness tables come with their header as the first line.
fn table_text(hash: &str, lines: &[String]) -> String {
    let (header, rows) = lines.split_first().expect("tables carry a header");
    csv_text(hash, header, rows)
}

pub fn generate(mut settings: Settings, a: GenerateArgs) -> Result<(), Failure> {
    settings.flag("n_users", a.users);
    settings.flag("weeks_per_user", a.weeks);
    let cfg = settings.synth()?;
    settings.check_unknown()?;
    let mut manifest = RunManifest::new("generate");
    manifest.config(&cfg.to_kv());
    manifest.output("records", &a.out);
    manifest.output("labels", &a.labels);
    let hash = manifest.write_beside(&a.out)?;

    let cohort = generate_cohort(&cfg)?;
    let labels = cohort.labels();
    let report = plant_check(&cohort.records, &labels, &cfg);
    for t in &report.tasks {
        log::info!("planted task={} rmssd_ratio={:.3} too_small={}", t.task, t.ratio(), t.too_small);
    }
    if report.too_small() {
        log::warn!("planted effect below the detectable margin for at least one task");
    }
    let mut records = Vec::new();
    cohort.write_records(&mut records)?;
    let mut label_text = format!("# manifest {hash}\n").into_bytes();
    cohort.write_labels(&mut label_text)?;
    write(&a.out, &records)?;
    write(&a.labels, &label_text)?;
    log::info!("generated users={} records={}", cohort.users.len(), cohort.records.len());
    Ok(())
}

pub fn encode(mut settings: Settings, a: EncodeArgs) -> Result<(), Failure> {
    settings.flag("split", a.split);
    settings.flag("max_events", a.max_events);
    settings.flag("tasks", a.tasks);
    let split_text: String = settings.value("split", "0.6,0.2,0.2".to_string())?;
    let fractions = SplitFractions::parse(&split_text).map_err(|e| Failure::Usage(format!("split: {e}")))?;
    let max_events: usize = settings.value("max_events", MAX_TIMESTEPS)?;
    if !(1..=MAX_TIMESTEPS).contains(&max_events) {
        return Err(ConfigError::invalid("max_events", max_events, format!("must lie in 1..={MAX_TIMESTEPS}")).into());
    }
    let seed: u64 = settings.value("seed", 0)?;
    let tasks: Vec<String> = match settings.has("tasks") {
        true => parse_list("tasks", &settings.value("tasks", String::new())?)?,
        false => DEFAULT_TASKS.iter().map(|t| t.to_string()).collect(),
    };
    settings.check_unknown()?;

    let records_bytes = read(&a.input)?;
    let label_bytes = read(&a.labels)?;
    let mut manifest = RunManifest::new("encode");
    manifest.input("records", &a.input, &records_bytes);
    manifest.input("labels", &a.labels, &label_bytes);
    let mut cfg = KeyValues::new();
    cfg.set("split", &split_text);
    cfg.set("max_events", max_events);
    cfg.set("seed", seed);
    cfg.set("tasks", tasks.join(","));
    manifest.config(&cfg);
    manifest.output("cache", &a.out);

    let parsed = parse_records(records_bytes.as_slice())?;
    for (reason, n) in &parsed.rejections {
        log::warn!("rejected records reason={reason} count={n}");
        manifest.set(format!("rejected.{reason}"), n);
    }
    if parsed.records.is_empty() {
        return Err(Failure::Data(format!("{}: no valid records", a.input.display())));
    }
    let diagnoses = parse_labels(label_bytes.as_slice())?;
    let (cache, stats) =
        build_cache(&parsed.records, &diagnoses, &tasks, NormalizationParams::default(), seed, fractions, max_events)?;
    log::info!(
        "encoded users={} weeks_seen={} accepted={} too_few={} no_continuous_run={} truncated_events={}",
        stats.users,
        stats.weeks_seen,
        stats.weeks_accepted,
        stats.rejected_too_few,
        stats.rejected_continuity,
        stats.events_truncated
    );
    if cache.weeks.is_empty() {
        return Err(Failure::Data("no week passed the quality filter".into()));
    }
    manifest.set("weeks.seen", stats.weeks_seen);
    manifest.set("weeks.accepted", stats.weeks_accepted);
    manifest.set("weeks.rejected_too_few", stats.rejected_too_few);
    manifest.set("weeks.rejected_continuity", stats.rejected_continuity);
    manifest.set("users", stats.users);
    manifest.cache_labels(&cache);
    manifest.write_beside(&a.out)?;
    cache.write(&a.out).map_err(|e| Failure::data(a.out.display(), e))
}

pub fn features(settings: Settings, a: FeaturesArgs) -> Result<(), Failure> {
    settings.check_unknown()?;
    let (cache, bytes) = load_cache(&a.cache)?;
    let mut manifest = RunManifest::new("features");
    manifest.input("cache", &a.cache, &bytes);
    manifest.output("features", &a.out);
    let hash = manifest.write_beside(&a.out)?;
    let rows: Vec<String> = cache_features(&cache).iter().map(FeatureRow::csv_row).collect();
    write(&a.out, csv_text(&hash, &FeatureRow::csv_header(&cache.header.tasks), &rows).as_bytes())
}

pub fn pretrain(mut settings: Settings, a: PretrainArgs) -> Result<(), Failure> {
    let mode: Pretraining = a.mode.parse().map_err(|e| Failure::Usage(format!("--mode: {e}")))?;
    if mode == Pretraining::None {
        return Err(Failure::Usage("--mode must be autoencoder or heuristic".into()));
    }
    settings.flag("pretraining", Some(mode));
    let mut manifest = RunManifest::new("pretrain");
    let (cache, model, cfg) = training_setup(&settings, &mut manifest, &a.cache)?;
    manifest.output("checkpoint", &a.out);
    let hash = manifest.write_beside(&a.out)?;

    let (store, log) = match mode {
        Pretraining::Autoencoder => pretrain_autoencoder(&cache, &model, &cfg)?,
        _ => pretrain_heuristic(&cache, &model, &cfg)?,
    };
    if let Some(path) = &a.log {
        write(path, train_log_csv(&hash, std::slice::from_ref(&log)).as_bytes())?;
    }
    save_checkpoint(&store, &a.out)?;
    log::info!("pretrained mode={mode} epochs={} weeks={}", log.epochs.len(), log.train_weeks);
    Ok(())
}

pub fn train(mut settings: Settings, a: TrainArgs) -> Result<(), Failure> {
    settings.flag("label_fraction", a.label_fraction);
    settings.flag("ablation", a.ablation);
    let init = match &a.init {
        Some(path) => {
            let store = load_checkpoint(path)?;
            if store.kind() == ModelKind::Autoencoder {
                return Err(Failure::Data(format!("{}: expected an encoder or deepheart checkpoint", path.display())));
            }
            Some((store, read(path)?))
        }
        None => None,
    };
    let mut manifest = RunManifest::new("train");
    let (cache, model, cfg) = training_setup(&settings, &mut manifest, &a.cache)?;
    if let (Some((_, bytes)), Some(path)) = (&init, &a.init) {
        manifest.input("init", path, bytes);
    }
    manifest.training_labels(&cache, cfg.seed, cfg.label_fraction);
    manifest.output("checkpoint", &a.out);
    let hash = manifest.write_beside(&a.out)?;

    let (store, logs) = match &init {
        Some((enc, _)) => {
            let (store, log) = train_supervised(&cache, &model, &cfg, Some(enc))?;
            (store, vec![log])
        }
        None => train_pipeline(&cache, &model, &cfg)?,
    };
    if let Some(path) = &a.log {
        write(path, train_log_csv(&hash, &logs).as_bytes())?;
    }
    save_checkpoint(&store, &a.out)?;
    let last = logs.last().expect("supervised phase always runs");
    log::info!("trained best_epoch={} weeks={} users={}", last.best_epoch, last.train_weeks, last.train_users);
    Ok(())
}

pub fn evaluate_cmd(settings: Settings, a: EvaluateArgs) -> Result<(), Failure> {
    let split = parse_split(&a.split)?;
    let recorded = RunManifest::read_config_value(&a.model, "ablation");
    let ablation_text = a.ablation.or(recorded).unwrap_or_else(|| "all".into());
    let ablation: Ablation = ablation_text.parse().map_err(|e| Failure::Usage(format!("--ablation: {e}")))?;
    let n_boot = n_boot(&settings, a.n_boot)?;
    let seed: u64 = settings.value("seed", 0)?;
    settings.check_unknown()?;

    let (cache, cache_bytes) = load_cache(&a.cache)?;
    let model_bytes = read(&a.model)?;
    let store = load_checkpoint(&a.model)?;
    expect_kind(&store, ModelKind::DeepHeart)?;
    let mut manifest = RunManifest::new("evaluate");
    manifest.input("cache", &a.cache, &cache_bytes);
    manifest.input("model", &a.model, &model_bytes);
    let mut cfg = KeyValues::new();
    cfg.set("split", split);
    cfg.set("ablation", ablation);
    cfg.set("n_boot", n_boot);
    cfg.set("seed", seed);
    manifest.config(&cfg);
    manifest.cache_labels(&cache);
    manifest.output("report", &a.out);
    if let Some(roc) = &a.roc {
        manifest.output("roc", roc);
    }
    let hash = manifest.write_beside(&a.out)?;

    let report = evaluate(&store, &cache, split, ablation, n_boot, seed)?;
    if report.tasks.is_empty() {
        log::warn!("no task has both classes in the {split} split");
    }
    for t in &report.tasks {
        log::info!("auc level={} task={} auc={:.4} ci=[{:.4},{:.4}]", t.level, t.task, t.auc, t.ci_low, t.ci_high);
    }
    if let Some(roc) = &a.roc {
        write(roc, csv_text(&hash, EvalReport::ROC_HEADER, &report.roc_rows()).as_bytes())?;
    }
    write(&a.out, csv_text(&hash, EvalReport::CSV_HEADER, &report.csv_rows("deepheart")).as_bytes())
}

pub fn sweep(settings: Settings, a: SweepArgs) -> Result<(), Failure> {
    let fractions: Vec<f64> = parse_list("fractions", &a.fractions)?;
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Failure::Usage(format!("--fractions: {f} outside (0, 1]")));
    }
    let modes: Vec<Pretraining> = parse_list("modes", &a.modes)?;
    let n_boot = n_boot(&settings, a.n_boot)?;
    let mut manifest = RunManifest::new("sweep");
    let (cache, model, base) = training_setup(&settings, &mut manifest, &a.cache)?;
    let seeds = seed_list(base.seed, a.seeds)?;
    manifest.set("sweep.fractions", &a.fractions);
    manifest.set("sweep.modes", &a.modes);
    manifest.set("sweep.seeds", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    manifest.set("sweep.n_boot", n_boot);
    manifest.output("table", &a.out);
    let hash = manifest.write_beside(&a.out)?;

    let rows = label_fraction_sweep(&cache, &model, &base, &fractions, &modes, &seeds, n_boot);
    write(&a.out, table_text(&hash, &sweep_csv(&rows)).as_bytes())
}

pub fn grid(settings: Settings, a: GridArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("grid");
    let (cache, model, base) = training_setup(&settings, &mut manifest, &a.cache)?;
    manifest.output("table", &a.out);
    let hash = manifest.write_beside(&a.out)?;
    let configs: Vec<ModelConfig> =
        table3_grid().into_iter().map(|c| ModelConfig { tasks: model.tasks.clone(), ..c }).collect();
    let rows = grid_runner(&cache, &configs, &base);
    write(&a.out, table_text(&hash, &grid_csv(&model.tasks, &rows)).as_bytes())
}

pub fn ablate(settings: Settings, a: AblateArgs) -> Result<(), Failure> {
    let modes: Vec<Ablation> = parse_list("modes", &a.modes)?;
    let n_boot = n_boot(&settings, a.n_boot)?;
    let mut manifest = RunManifest::new("ablate");
    let (cache, model, base) = training_setup(&settings, &mut manifest, &a.cache)?;
    let seeds = seed_list(base.seed, a.seeds)?;
    manifest.set("ablate.modes", &a.modes);
    manifest.set("ablate.seeds", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    manifest.set("ablate.n_boot", n_boot);
    manifest.output("table", &a.out);
    let hash = manifest.write_beside(&a.out)?;
    let rows = channel_ablation(&cache, &model, &base, &modes, &seeds, n_boot);
    write(&a.out, table_text(&hash, &ablation_csv(&rows)).as_bytes())
}

fn read_features(path: &Path, text: &str, tasks: &[String]) -> Result<Vec<FeatureRow>, Failure> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Failure::Data(format!("{}: empty features file", path.display())))?;
    if header != FeatureRow::csv_header(tasks) {
        return Err(Failure::Data(format!("{}: header does not match the cache's tasks", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, l)| FeatureRow::parse_csv_row(l, tasks.len()).map_err(|e| Failure::data(format!("{} row {}", path.display(), i + 1), e)))
        .collect()
}

pub fn baselines(settings: Settings, a: BaselinesArgs) -> Result<(), Failure> {
    let n_boot = n_boot(&settings, a.n_boot)?;
    let seed: u64 = settings.value("seed", 0)?;
    settings.check_unknown()?;
    let (cache, cache_bytes) = load_cache(&a.cache)?;
    let feature_bytes = read(&a.features)?;
    let text = String::from_utf8(feature_bytes.clone()).map_err(|e| Failure::data(a.features.display(), e))?;
    let features = read_features(&a.features, &text, &cache.header.tasks)?;

    let mut manifest = RunManifest::new("baselines");
    manifest.input("cache", &a.cache, &cache_bytes);
    manifest.input("features", &a.features, &feature_bytes);
    let mut cfg = KeyValues::new();
    cfg.set("n_boot", n_boot);
    cfg.set("seed", seed);
    manifest.config(&cfg);
    manifest.cache_labels(&cache);
    manifest.output("report", &a.out);
    let hash = manifest.write_beside(&a.out)?;

    let reports = run_baselines(&cache, &features, seed, n_boot);
    let rows: Vec<String> = reports.iter().flat_map(|(name, r)| r.csv_rows(name)).collect();
    write(&a.out, csv_text(&hash, EvalReport::CSV_HEADER, &rows).as_bytes())
}
