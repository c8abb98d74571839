//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sparsebench", version, about = "Regression benchmark for sparse, mixed-type tabular data")]
pub struct Cli {
    /// Worker threads for model fitting (default: available parallelism).
    #[arg(long, global = true, env = "SPARSEBENCH_JOBS")]
    pub jobs: Option<usize>,

    /// Log filter, e.g. `warn` or `sparsebench=debug`. RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted factor structure.
    GenSynth(GenSynthArgs),
    /// Validate a dataset against a codebook and report sparsity.
    Ingest(IngestArgs),
    /// Run every model on paired random splits of every task.
    Benchmark(BenchmarkArgs),
    /// Rank factors by the test RMSE of single-factor embedding networks.
    RankFactors(RankFactorsArgs),
    /// Paired t-tests and the sparsity interaction test on a benchmark report.
    Stats(StatsArgs),
    /// t-SNE projection of factor embeddings from a factor ranking.
    Project(ProjectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutChoice {
    /// Small uniform layout controlled by --factors/--numerical/--categorical/--levels.
    Synthetic,
    /// 55 factors with the full variable counts per factor.
    Midus,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Generator configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Use this codebook instead of a built-in layout.
    #[arg(long, conflicts_with = "layout")]
    pub codebook: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LayoutChoice::Synthetic)]
    pub layout: LayoutChoice,
    #[arg(long, default_value_t = 55)]
    pub factors: usize,
    #[arg(long, default_value_t = 3)]
    pub numerical: usize,
    #[arg(long, default_value_t = 1)]
    pub categorical: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_participants: Option<usize>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// Epoch ceiling for the neural networks.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    /// Benchmark configuration (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated task names (default: all nine).
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    /// Comma-separated model names or aliases (default: all seven).
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankFactorsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Output directory of a `benchmark` run.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// `factor_ranking.json` from a `rank-factors` run.
    #[arg(long)]
    pub ranking: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    /// t-SNE configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}
