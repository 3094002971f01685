//! Command-line surface.

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use jnd_core::attacks::{Method, TargetPolicy};

pub const SEED_ENV: &str = "JND_SEED";

#[derive(Debug, Parser)]
#[command(name = "jnd", version, about = "Adversarial images near the just-noticeable difference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the desk classifier and write a checkpoint.
    Train(TrainArgs),
    /// Attack correctly classified test images with one method.
    Attack(AttackArgs),
    /// Aggregate table and distance statistics over attack runs.
    Compare(CompareArgs),
    /// Grid-search attack hyperparameters on the validation split.
    Sweep(SweepArgs),
    /// Distance statistics only (KL and L2 populations with KDEs).
    Stats(CompareArgs),
}

#[derive(Clone, Debug, Args)]
#[command(group(ArgGroup::new("dataset").required(true).args(["synthetic", "cifar"])))]
pub struct DataArgs {
    /// Synthetic dataset: CLASSES x PER_CLASS images of 32x32x3.
    #[arg(long, value_name = "CxN", value_parser = parse_synthetic)]
    pub synthetic: Option<(usize, usize)>,
    /// Directory with the CIFAR-10 binary batches.
    #[arg(long, value_name = "DIR")]
    pub cifar: Option<PathBuf>,
    /// Seed of the synthetic generator; defaults to the run seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Clone, Debug, Args)]
pub struct SeedArgs {
    /// Run seed; falls back to $JND_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    /// Synthetic test images per class.
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    /// CIFAR-10 training records to use.
    #[arg(long, default_value_t = 2000)]
    pub train_count: usize,
    /// CIFAR-10 test records to evaluate on.
    #[arg(long, default_value_t = 1000)]
    pub test_count: usize,
    /// Checkpoint path; the run log goes to `<out>.log.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StopArg {
    FirstFlip,
    Confidence,
}

#[derive(Clone, Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// runner-up, nontargeted or a class index; runner-up by default, nontargeted for deepfool.
    #[arg(long, value_parser = parse_target)]
    pub target: Option<TargetPolicy>,
    /// λ1,λ2,λ3,λ4 of the JND cost.
    #[arg(long, value_name = "L1,L2,L3,L4", value_parser = parse_lambdas, allow_hyphen_values = true)]
    pub lambda: Option<[f64; 4]>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = StopArg::FirstFlip)]
    pub stop: StopArg,
    /// Confidence threshold of `--stop confidence`.
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Correctly classified test images to attack.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// CIFAR-10 test records to scan.
    #[arg(long, default_value_t = 10000)]
    pub test_count: usize,
    /// Write per-image confidence trajectories.
    #[arg(long)]
    pub trace: bool,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct CompareArgs {
    /// Output directories of `attack` runs.
    #[arg(required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed KDE bandwidth; Silverman's rule otherwise.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = jnd_core::stats::KDE_DEFAULT_POINTS)]
    pub kde_points: usize,
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// JSON grid specification.
    #[arg(long)]
    pub grid: PathBuf,
    /// Overrides the grid's validation count.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

impl SeedArgs {
    /// `--seed`, else `$JND_SEED`, else 0.
    pub fn resolve(&self) -> Result<u64, String> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| format!("${SEED_ENV}: `{v}` is not an unsigned integer")),
            Err(_) => Ok(0),
        }
    }
}

fn parse_synthetic(s: &str) -> Result<(usize, usize), String> {
    let (c, n) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected CLASSESxPER_CLASS, got `{s}`"))?;
    let c = c.trim().parse().map_err(|_| format!("bad class count `{c}`"))?;
    let n = n.trim().parse().map_err(|_| format!("bad per-class count `{n}`"))?;
    Ok((c, n))
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: jnd_core::JndError| e.to_string())
}

fn parse_target(s: &str) -> Result<TargetPolicy, String> {
    s.parse().map_err(|e: jnd_core::JndError| e.to_string())
}

fn parse_lambdas(s: &str) -> Result<[f64; 4], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}`")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|v: Vec<f64>| format!("expected 4 comma-separated values, got {}", v.len()))
}
