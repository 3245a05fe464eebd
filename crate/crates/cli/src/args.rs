use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mtd", version, about = "Session-based next-item recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a raw corpus, split it and remap tokens to dense IDs.
    Prepare(PrepareArgs),
    /// Train a model on a prepared corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a prepared test corpus.
    Eval(EvalArgs),
    /// Rank items for a single session of external tokens.
    Recommend(RecommendArgs),
    /// Evaluate a non-neural baseline.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
    /// Vocabulary dump path; defaults to `<train-out>.vocab`.
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
    /// Fraction of sessions (in file order) that go to the training split.
    #[arg(long, default_value_t = 0.9)]
    pub split_frac: f64,
    #[arg(long, default_value_t = mtd_core::data::DEFAULT_MIN_FREQ)]
    pub min_freq: usize,
    #[arg(long, default_value_t = mtd_core::data::DEFAULT_MIN_LEN)]
    pub min_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Positional {
    Decay,
    Raw,
}

/// Every option is optional so that `--config` can fill the gaps.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub ckpt_out: Option<PathBuf>,
    /// key=value file with defaults; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub freq: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub gcn_layers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Skip the graph phase (intra-session encoder only).
    #[arg(long)]
    pub no_graph: bool,
    #[arg(long, value_enum)]
    pub positional: Option<Positional>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated cutoffs.
    #[arg(long, default_value = "10,20")]
    pub k: String,
    /// Vocabulary to check against the checkpoint; defaults to `<ckpt>.vocab` when present.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Write machine-readable metric lines here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write per-instance ranks as CSV here.
    #[arg(long)]
    pub ranks: Option<PathBuf>,
    /// Overrides the mode recorded in `<ckpt>.manifest`.
    #[arg(long, value_enum)]
    pub positional: Option<Positional>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Whitespace-separated external tokens, oldest first.
    #[arg(long)]
    pub session: String,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    /// Defaults to `<ckpt>.vocab`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub positional: Option<Positional>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Pop,
    Spop,
    Itemknn,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "10,20")]
    pub k: String,
    /// Neighborhood size for itemknn.
    #[arg(long, default_value_t = 100)]
    pub neighbors: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub ranks: Option<PathBuf>,
}
