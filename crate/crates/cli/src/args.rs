use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tagc::bench::ValueKind;
use tagc::collectives::ExecMode;
use tagc::hook::LayerPolicy;

#[derive(Debug, Parser)]
#[command(
    name = "tagc",
    version,
    about = "Compressed gradient exchange benchmarks and experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Seeded Monte-Carlo round trips through index, sketch and decoder.
    Roundtrip(RoundtripArgs),
    /// Modelled and measured traffic per parameter per rank.
    Commreport(CommreportArgs),
    /// Data-parallel training from a run config or a previous manifest.
    Train(TrainArgs),
    /// Which layers a policy sends through the compressed path.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Directory for report files; nothing is written without it.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    /// Sketch compression ratio: 2, 4 or 10.
    #[arg(long)]
    pub ratio: u32,
    /// Percentage of zeros in the merged support.
    #[arg(long)]
    pub theta: f64,
    /// Index bits per position: 1 or 4.
    #[arg(long, default_value_t = 4)]
    pub width: u32,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, default_value_t = 2)]
    pub world_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Values::Int)]
    pub values: Values,
    /// Accept theta below the operating point of the ratio.
    #[arg(long)]
    pub allow_below_table: bool,
    #[arg(long, value_enum, default_value_t = Mode::Sequential)]
    pub mode: Mode,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CommreportArgs {
    /// Configs as WIDTH:RATIO or WIDTH:RATIO:THETA, e.g. 1:10 or 4:2:80.
    #[arg(value_name = "CONFIG")]
    pub configs: Vec<String>,
    /// Add both index widths at every operating point.
    #[arg(long)]
    pub table: bool,
    #[arg(long, default_value_t = 2)]
    pub world_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Sequential)]
    pub mode: Mode,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML) or a manifest.json written by an earlier run.
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Sequential)]
    pub mode: Mode,
    /// Override the number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Model shape (TOML): a decoder config or a list of `[[layer]]` tables.
    #[arg(long, conflicts_with = "preset")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Gpt2Small)]
    pub preset: Preset,
    #[arg(long, value_enum, default_value_t = Policy::NonAttentionLinear)]
    pub policy: Policy,
    /// Keep the attention output projection on the baseline path.
    #[arg(long)]
    pub exclude_out_proj: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Sequential,
    Parallel,
}

impl From<Mode> for ExecMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sequential => ExecMode::Sequential,
            Mode::Parallel => ExecMode::Parallel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Values {
    Int,
    Float,
}

impl From<Values> for ValueKind {
    fn from(v: Values) -> Self {
        match v {
            Values::Int => ValueKind::Integer,
            Values::Float => ValueKind::Float,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Gpt2Small,
    Tiny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    AllLayers,
    NonAttentionLinear,
    None,
}

impl From<Policy> for LayerPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::AllLayers => LayerPolicy::AllLayers,
            Policy::NonAttentionLinear => LayerPolicy::NonAttentionLinear,
            Policy::None => LayerPolicy::None,
        }
    }
}
