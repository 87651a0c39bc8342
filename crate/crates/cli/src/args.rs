use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Causal direction discovery with online codes, and causal/anticausal
/// learning experiments on cipher corpora.
#[derive(Debug, Parser)]
#[command(name = "causal-mdl", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON object whose keys override the subcommand flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed from which every random stream is derived.
    #[arg(long, global = true, default_value_t = 0)]
    pub global_seed: u64,
    /// Worker threads for grid cells and online-code blocks.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "CAUSAL_MDL_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a cipher corpus from a file of plain-text lines.
    Generate(GenerateArgs),
    /// Run the direction test on a corpus and write the verdict.
    Discover(DiscoverArgs),
    /// Write selected online-code reports without a verdict.
    Mdl(MdlArgs),
    /// Run the self-training grid.
    Ssl(SslArgs),
    /// Run the domain-adaptation grid.
    Da(DaArgs),
    /// Welch's t-test on two groups.
    Meta(MetaArgs),
    /// Re-aggregate an existing results CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Plain-text file, one line per pair.
    #[arg(long)]
    pub input: PathBuf,
    /// Side that receives the noise: ciphertext or source_text.
    #[arg(long, default_value = "ciphertext")]
    pub noised_side: String,
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    /// Noise seed; derived from the global seed when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Enabled noise operators.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "word_mask,permute,roll,insert"
    )]
    pub noises: Vec<String>,
    #[arg(long, default_value = "char")]
    pub mode: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ChannelArgs {
    /// Target history length of the channel model.
    #[arg(long, default_value_t = 2)]
    pub target_history: usize,
    /// Half-width of the source window of the channel model.
    #[arg(long, default_value_t = 1)]
    pub source_window: usize,
    /// positional or resync.
    #[arg(long, default_value = "resync")]
    pub alignment: String,
    #[arg(long, default_value_t = 1)]
    pub lookahead: usize,
    #[arg(long, default_value_t = 1)]
    pub lookback: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CodeArgs {
    /// Corpus in JSONL format.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "char")]
    pub mode: String,
    /// Block sizes in percent of the corpus.
    #[arg(long, value_delimiter = ',', conflicts_with = "ends")]
    pub fractions: Option<Vec<f64>>,
    /// Explicit cumulative block ends; the last must equal the corpus size.
    #[arg(long, value_delimiter = ',')]
    pub ends: Option<Vec<usize>>,
    /// N-gram order of the marginal model; 5 for char and 3 for word by
    /// default.
    #[arg(long)]
    pub lm_order: Option<usize>,
    /// Replace both model families by the uniform code.
    #[arg(long)]
    pub uniform: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: ChannelArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DiscoverArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub code: CodeArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MdlArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub code: CodeArgs,
    /// Reports to compute.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "MARGINAL_X,MARGINAL_Y,COND_Y_GIVEN_X,COND_X_GIVEN_Y"
    )]
    pub components: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',', default_value = "ciphertext,source_text")]
    pub families: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "causal,anticausal")]
    pub directions: Vec<String>,
    /// Number of seeds; cells use seeds 1..=N.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Run only this seed.
    #[arg(long)]
    pub only_seed: Option<u64>,
    /// Line pool to sample from instead of the built-in grammar.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "char")]
    pub mode: String,
    /// bleu or char_accuracy.
    #[arg(long, default_value = "bleu")]
    pub metric: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SslArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 500)]
    pub k: usize,
    #[arg(long, default_value_t = 20_000)]
    pub m: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    #[arg(long, default_value_t = 3)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    /// Drop pseudo-labels costing more bits per token than this.
    #[arg(long)]
    pub max_pseudo_bits_per_token: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: ChannelArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 5000)]
    pub n_source: usize,
    #[arg(long, default_value_t = 500)]
    pub n_adapt: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0.05)]
    pub source_p: f64,
    #[arg(long, default_value_t = 0.15)]
    pub target_p: f64,
    /// count_merge or continue_train.
    #[arg(long, default_value = "count_merge")]
    pub adaptation: String,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    pub lambda_grid: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub dev_fraction: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: ChannelArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MetaArgs {
    /// First group as n,mean,std.
    #[arg(
        long,
        allow_hyphen_values = true,
        requires = "b",
        conflicts_with = "values"
    )]
    pub a: Option<String>,
    /// Second group as n,mean,std.
    #[arg(long, allow_hyphen_values = true, requires = "a")]
    pub b: Option<String>,
    /// CSV with columns group,value holding raw samples of two groups.
    #[arg(long)]
    pub values: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Results CSV written by `ssl` or `da`.
    #[arg(long)]
    pub results: PathBuf,
}
