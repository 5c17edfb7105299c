//! `deepheart`: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.

mod commands;
mod manifest;
mod settings;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deepheart::cache::CacheError;
use deepheart::checkpoint::CheckpointError;
use deepheart::config::ConfigError;
use deepheart::eval::EvalError;
use deepheart::sensorstream::SensorStreamError;
use deepheart::train::TrainError;

#[derive(Parser)]
#[command(name = "deepheart", version, about = "Heart-rate sequence models for cardiovascular risk prediction")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for the stage being run (generator, split or training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a planted-signal cohort.
    Generate(GenerateArgs),
    /// Parse, filter and encode sensor records into a tensor cache.
    Encode(EncodeArgs),
    /// Compute the 13 hand-engineered features per cached week.
    Features(FeaturesArgs),
    /// Pretrain an encoder (autoencoder or heuristic HRV targets).
    Pretrain(PretrainArgs),
    /// Supervised multi-task training.
    Train(TrainArgs),
    /// Score a split and report c-statistics with bootstrap intervals.
    Evaluate(EvaluateArgs),
    /// Label-fraction sweep across pretraining modes and seeds.
    Sweep(SweepArgs),
    /// Hyperparameter grid, scored on the tune split.
    Grid(GridArgs),
    /// Input-channel ablation.
    Ablate(AblateArgs),
    /// Logistic regression and MLP on the hand-engineered features.
    Baselines(BaselinesArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub weeks: Option<usize>,
}

#[derive(Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train/tune/test fractions, e.g. 0.6,0.2,0.2.
    #[arg(long)]
    pub split: Option<String>,
    /// Events kept per week (at most 4096).
    #[arg(long)]
    pub max_events: Option<usize>,
    /// Comma-separated task names (default: the four standard tasks).
    #[arg(long)]
    pub tasks: Option<String>,
}

#[derive(Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PretrainArgs {
    /// autoencoder or heuristic.
    #[arg(long)]
    pub mode: String,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cache: PathBuf,
    /// Pretrained encoder checkpoint to start from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub label_fraction: Option<f64>,
    /// all, hr_only or steps_only.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// train, tune or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Input channels the model saw (default: as recorded at training).
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub n_boot: Option<usize>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long, default_value = "0.05,0.1,0.2,0.5,0.7,1.0")]
    pub fractions: String,
    #[arg(long, default_value = "none,heuristic,autoencoder")]
    pub modes: String,
    /// Number of seeds, counting up from `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GridArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long, default_value = "all,hr_only,steps_only")]
    pub modes: String,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BaselinesArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_boot: Option<usize>,
}

/// Why a command stopped; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }

    pub fn data(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        Failure::Data(format!("{context}: {e}"))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => Failure::Data(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            e => Failure::Data(e.to_string()),
        }
    }
}

macro_rules! data_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.to_string())
            }
        }
    )*};
}
data_failure!(std::io::Error, CacheError, CheckpointError, SensorStreamError);

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, rec| {
            writeln!(
                buf,
                "ts={} level={} target={} msg={:?}",
                buf.timestamp_millis(),
                rec.level().as_str().to_ascii_lowercase(),
                rec.target(),
                rec.args().to_string()
            )
        })
        .init();
}

fn set_threads(n: Option<usize>) -> Result<(), Failure> {
    match n {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}"))),
        #[cfg(not(feature = "parallel"))]
        Some(_) => {
            log::warn!("built without the parallel feature; --threads ignored");
            Ok(())
        }
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    set_threads(cli.threads)?;
    let mut settings = settings::Settings::load(cli.config.as_deref())?;
    settings.flag("seed", cli.seed);
    match cli.command {
        Command::Generate(a) => commands::generate(settings, a),
        Command::Encode(a) => commands::encode(settings, a),
        Command::Features(a) => commands::features(settings, a),
        Command::Pretrain(a) => commands::pretrain(settings, a),
        Command::Train(a) => commands::train(settings, a),
        Command::Evaluate(a) => commands::evaluate_cmd(settings, a),
        Command::Sweep(a) => commands::sweep(settings, a),
        Command::Grid(a) => commands::grid(settings, a),
        Command::Ablate(a) => commands::ablate(settings, a),
        Command::Baselines(a) => commands::baselines(settings, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{}", f.message());
            if matches!(f, Failure::Usage(_)) {
                eprintln!("\nRun `deepheart --help` for usage.");
            }
            ExitCode::from(f.code())
        }
    }
}
