use std::path::PathBuf;

use cci_core::analysis::Direction;
use cci_core::consensus::BalanceMode;
use cci_core::{MetricKind, MissingPolicy};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cci", version, about = "Cross-lingual consistency metrics and consensus mining")]
pub struct Cli {
    /// Master seed; every random step derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// JSON configuration file (language groups, ranking, stereotypes, ...).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Comma-separated language set; defaults to the config or the eight
    /// built-in languages.
    #[arg(long, global = true)]
    pub languages: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset checks.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Supersample-level train/validation/test split.
    Split(SplitArgs),
    /// Classify raw outputs into verdicts.
    Parse(ParseArgs),
    /// Agreement metrics per language group and persona.
    Measure(MeasureArgs),
    /// Consensus preference pairs in parallel batches.
    Mine(MineArgs),
    /// Consistency as languages join in resource order.
    AnalyzeOrder(OrderArgs),
    /// Country selection, persona adherence and knowledge audits.
    Audit(AuditArgs),
    /// Layer-wise stereotype frequency, slopes and kappa.
    AnalyzeLayers(LayerArgs),
    /// Mean activation differences per layer.
    Steering(SteeringArgs),
    /// Merge the outputs of earlier runs after checking their digests.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum IngestCommand {
    /// Load a dataset and report incomplete parallel groups.
    Validate { dataset: PathBuf },
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "0.7,0.1,0.2")]
    pub ratios: String,
}

/// Inputs shared by every command that reads a response log.
#[derive(Debug, Args)]
pub struct ResponseArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
    /// JSON field holding the answer; repeat or comma-separate for fallbacks.
    #[arg(long, value_delimiter = ',')]
    pub answer_field: Vec<String>,
    /// `singleton` or `drop`.
    #[arg(long)]
    pub missing_policy: Option<MissingPolicy>,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[command(flatten)]
    pub input: ResponseArgs,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[command(flatten)]
    pub input: ResponseArgs,
    /// Label for this run in consolidated reports.
    #[arg(long)]
    pub method: Option<String>,
    /// Also report valid-only kappa on the singleton-free rows.
    #[arg(long)]
    pub renormalize_valid: bool,
    /// Bootstrap resamples per table.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub input: ResponseArgs,
    #[arg(long, default_value = "per-pair")]
    pub balance: BalanceMode,
    /// Batch file; relative paths are placed under --out-dir.
    #[arg(long, default_value = "batches.jsonl")]
    pub out: PathBuf,
    /// Persona slice to mine (`none` for persona-less records). Required
    /// when the log holds several personas.
    #[arg(long)]
    pub persona: Option<String>,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[command(flatten)]
    pub input: ResponseArgs,
    #[arg(long, default_value = "high2low")]
    pub direction: Direction,
    #[arg(long, default_value = "kappa-s")]
    pub metric: MetricKind,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub input: ResponseArgs,
    /// Report persona-country match accuracy.
    #[arg(long)]
    pub personas: bool,
    /// Gold answers (JSONL of sample_id, key, country) for a knowledge audit.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Second response log whose selection rates are compared.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LayerArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub dump: PathBuf,
    /// JSON map from language to its stereotypical country.
    #[arg(long)]
    pub stereotypes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SteeringArgs {
    #[arg(long = "with")]
    pub with_persona: PathBuf,
    #[arg(long = "without")]
    pub without_persona: PathBuf,
    /// Comma-separated layer indices; all layers when omitted.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Manifests of the runs to merge.
    pub manifests: Vec<PathBuf>,
}
