use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sift_core::corpus::{CorpusFormat, LengthScope, TokenCounter};
use sift_core::scores::{CoveragePolicy, Encoding};
use sift_core::select::QuotaMode;

#[derive(Debug, Parser, Serialize)]
#[command(name = "sift", version, about = "Streaming data selection for instruction-tuning corpora")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Global {
    /// TOML file whose values are used for flags not given on the command line.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Worker threads [env: SIFT_THREADS; default: physical cores].
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Memory ceiling for in-memory indexes, e.g. 2G or 512M.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_cap: Option<String>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub print_config: bool,
    /// Log level filter, e.g. info or debug.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Summarize a corpus: counts per source, token-length distribution, duplicates.
    Stats(StatsArgs),
    /// Turn model outputs into a per-record quality score table.
    Score(ScoreArgs),
    /// Cluster embeddings with k-means.
    Cluster(ClusterArgs),
    /// Select a subset and write its manifest.
    Select(SelectArgs),
    /// Write the records of a manifest as a corpus file.
    Export(ExportArgs),
    /// Compare manifests against a random baseline.
    Report(ReportArgs),
    /// Check a corpus and score files against each other.
    Validate(ValidateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Stats(_) => "stats",
            Command::Score(_) => "score",
            Command::Cluster(_) => "cluster",
            Command::Select(_) => "select",
            Command::Export(_) => "export",
            Command::Report(_) => "report",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    Conversation,
    Pair,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Conversation => CorpusFormat::Conversation,
            FormatArg::Pair => CorpusFormat::Pair,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokensArg {
    Whitespace,
    Ingested,
}

impl From<TokensArg> for TokenCounter {
    fn from(t: TokensArg) -> Self {
        match t {
            TokensArg::Whitespace => TokenCounter::Whitespace,
            TokensArg::Ingested => TokenCounter::Ingested,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeArg {
    Both,
    Response,
}

impl From<ScopeArg> for LengthScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Both => LengthScope::Both,
            ScopeArg::Response => LengthScope::ResponseOnly,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageArg {
    Strict,
    AllowMissing,
}

impl From<CoverageArg> for CoveragePolicy {
    fn from(c: CoverageArg) -> Self {
        match c {
            CoverageArg::Strict => CoveragePolicy::Strict,
            CoverageArg::AllowMissing => CoveragePolicy::AllowMissing,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingArg {
    Text,
    Binary,
}

impl From<EncodingArg> for Encoding {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::Text => Encoding::Text,
            EncodingArg::Binary => Encoding::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuotaArg {
    Proportional,
    Uniform,
}

impl From<QuotaArg> for QuotaMode {
    fn from(q: QuotaArg) -> Self {
        match q {
            QuotaArg::Proportional => QuotaMode::Proportional,
            QuotaArg::Uniform => QuotaMode::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMethodArg {
    Ifd,
    Entropy,
    Selectit,
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectMethodArg {
    Random,
    Top,
    TopKm,
    LengthKm,
    Kcenter,
    Zip,
}

impl SelectMethodArg {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectMethodArg::Random => "random",
            SelectMethodArg::Top => "top",
            SelectMethodArg::TopKm => "top-km",
            SelectMethodArg::LengthKm => "length-km",
            SelectMethodArg::Kcenter => "kcenter",
            SelectMethodArg::Zip => "zip",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZipUpdateArg {
    All,
    Pool,
}

/// Corpus location and parsing options shared by most subcommands.
#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CorpusArgs {
    /// JSON Lines corpus. `stats` also takes it as a bare path.
    #[arg(long, visible_alias = "in")]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "conversation")]
    pub format: FormatArg,
    /// Skip malformed lines without a limit.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct LengthArgs {
    /// Token counter for length statistics.
    #[arg(long, value_enum, default_value = "whitespace")]
    pub tokens: TokensArg,
    /// Which turns a length covers.
    #[arg(long, value_enum, default_value = "both")]
    pub scope: ScopeArg,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct StatsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub length: LengthArgs,
    /// Drop repeated records from the counts.
    #[arg(long)]
    pub dedup: bool,
    /// Also write the report to this file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ScoreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_enum)]
    pub method: ScoreMethodArg,
    /// Score files of any input kind, routed by their header.
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<PathBuf>,
    /// Log-probability file (ifd, entropy).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<PathBuf>,
    /// Rating-probe files, one per model (selectit).
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<PathBuf>,
    /// Model weights for several probe files; defaults to the header betas.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub betas: Vec<f64>,
    /// Uncertainty weight of the sentence-level score.
    #[arg(long, default_value_t = sift_core::quality::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Gradient feature file (less).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradients: Option<PathBuf>,
    /// Exclude records with a difficulty score of at least 1 (ifd).
    #[arg(long)]
    pub drop_ifd_ge_1: bool,
    #[arg(long, value_enum, default_value = "strict")]
    pub coverage: CoverageArg,
    #[arg(long, value_enum, default_value = "text")]
    pub encoding: EncodingArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ClusterArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(short, long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Relative RMS centroid shift below which iteration stops.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_enum)]
    pub method: SelectMethodArg,
    /// Number of records, or a preset: 10k, 50k.
    #[arg(long, value_parser = parse_budget, default_value = "10k")]
    pub budget: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Score table (top, top-km).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    /// Cluster assignment (top-km, length-km).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<PathBuf>,
    /// Embedding file (kcenter).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Manifest whose records form the initial k-center pool.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    /// Per-cluster budget split.
    #[arg(long, value_enum, default_value = "proportional")]
    pub quota: QuotaArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub length: LengthArgs,
    #[arg(long, value_enum, default_value = "strict")]
    pub coverage: CoverageArg,
    /// ZIP stage-1 pool size.
    #[arg(long, default_value_t = 10_000)]
    pub k1: usize,
    /// ZIP stage-2 pool size.
    #[arg(long, default_value_t = 1_000)]
    pub k2: usize,
    /// ZIP records added per iteration.
    #[arg(long, default_value_t = 100)]
    pub k3: usize,
    /// ZIP selected-set context in bytes; 0 uses the whole selected set.
    #[arg(long, value_parser = parse_bytes, default_value = "1M")]
    pub zip_window: u64,
    /// ZIP scores refreshed between iterations.
    #[arg(long, value_enum, default_value = "all")]
    pub zip_update: ZipUpdateArg,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    /// Manifests to report on, optionally as label=path.
    #[arg(long, required = true)]
    pub manifest: Vec<String>,
    /// Random manifest to compare against; drawn with --seed when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub length: LengthArgs,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ValidateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub logprobs: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub gradients: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub embeddings: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub clusters: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub manifest: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "strict")]
    pub coverage: CoverageArg,
}

fn parse_budget(s: &str) -> Result<u64, String> {
    match s {
        "10k" => Ok(10_000),
        "50k" => Ok(50_000),
        _ => s.parse().map_err(|_| format!("expected a record count or 10k/50k, got {s:?}")),
    }
}

fn parse_bytes(s: &str) -> Result<u64, String> {
    sift_core::memory::parse_size(s)
        .map(|n| n as u64)
        .ok_or_else(|| format!("expected a byte count such as 1M or 65536, got {s:?}"))
}
