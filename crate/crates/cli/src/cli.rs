use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "flarecdr", version, about = "Solar flare forecasting with class-dependent rewards")]
pub struct Cli {
    /// Worker threads for sweeps and explanations (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic active-region dataset.
    Synth(SynthArgs),
    /// Compute per-frame features from magnetogram grids.
    ExtractFeatures(ExtractArgs),
    /// Build AR-level train/validation/test splits.
    Split(SplitArgs),
    /// Train with class-weighted cross-entropy.
    TrainDl(TrainDlArgs),
    /// Train with class-dependent rewards and experience replay.
    TrainCdr(TrainCdrArgs),
    /// Score checkpoints on one split set.
    Eval(EvalArgs),
    /// TSS at every threshold from 0% to 100%.
    Scan(ScanArgs),
    /// Retrain across a range of one reward value.
    Sweep(SweepArgs),
    /// Exact Shapley attributions per feature channel.
    Explain(ExplainArgs),
    /// Paired t-test between two per-fold report tables.
    Ttest(TtestArgs),
    /// Verify external probability files side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run directory for outputs and manifest.json; created if missing.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Default,
    HighSeparation,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub run: RunArgs,

    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,

    /// JSON generator settings; replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// AR counts per class: NOFLARE,C,M,X.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Grid file holding six grids per frame: LOS, Bz, Jz, shear angle,
    /// observed field and potential field.
    #[arg(long)]
    pub grids: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub run: RunArgs,

    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value_t = 10)]
    pub n_splits: usize,

    /// Per-class train,validation,test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,

    /// Exact per-class training counts: NOFLARE,C,M,X.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub train_counts: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,

    /// Split manifest written by `split`.
    #[arg(long)]
    pub splits: PathBuf,

    /// Restrict to these feature columns, in this order.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Arch {
    Transformer,
    Mlp,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "transformer")]
    pub arch: Arch,

    /// JSON model config; replaces --arch.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainDlArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long, default_value_t = 0)]
    pub fold: usize,

    /// JSON trainer config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    #[arg(long)]
    pub tp: Option<f64>,
    #[arg(long)]
    pub tn: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub fp: Option<f64>,
    #[arg(long = "fn", allow_hyphen_values = true)]
    pub fn_: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CdrArgs {
    /// JSON trainer config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub episodes: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[command(flatten)]
    pub rewards: RewardArgs,
}

#[derive(Debug, Args)]
pub struct TrainCdrArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub trainer: CdrArgs,

    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Checkpoint files; repeat for one report row per checkpoint.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,

    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub splits: PathBuf,

    #[arg(long, value_enum, default_value = "test")]
    pub set: SetName,

    /// Decision threshold; defaults to the one used in training.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// `ar_id,probability,label` file.
    #[arg(long)]
    pub probs: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub trainer: CdrArgs,

    /// Reward to vary: TP, TN, FP or FN.
    #[arg(long)]
    pub which: String,

    /// Inclusive integer range `lo:hi`, stepped by 1.
    #[arg(long, allow_hyphen_values = true)]
    pub range: String,

    /// Folds to retrain on (default: every fold in the split manifest).
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub run: RunArgs,

    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub splits: PathBuf,

    #[arg(long, value_enum, default_value = "test")]
    pub set: SetName,

    /// Explain only the first N ARs of the set.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Report table (as written by `eval` or `compare`) for method A.
    #[arg(long)]
    pub a: PathBuf,

    #[arg(long)]
    pub b: PathBuf,

    /// Column to compare row by row.
    #[arg(long, default_value = "tss")]
    pub metric: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// `NAME=PATH` of an `ar_id,probability,label` file; repeatable.
    #[arg(long = "probs", required = true)]
    pub probs: Vec<String>,

    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}
