use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "sandpile", version, about = "Abelian sandpile avalanche laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add grains to a configuration and stabilize it.
    Stabilize(StabilizeArgs),
    /// Draw samples of the stationary measure.
    Sample(SampleArgs),
    /// Avalanche tails at the centre under the stationary measure.
    AvalancheTails(TailsArgs),
    /// Toppling probabilities by the sandpile and spanning-forest routes.
    TopplingProb(TopplingArgs),
    /// LERW/SRW escape probabilities.
    Escape(EscapeArgs),
    /// Observables of the centre's tree in the two-root forest.
    TreeObs(TreeObsArgs),
    /// Wave-count distribution over a schedule of box sizes.
    Waves(WavesArgs),
    /// Exhaustive census of a tiny instance.
    Census(CensusArgs),
    /// Power-law fit of a tail CSV.
    Fit(FitArgs),
    /// Runs the enumeration-oracle suite.
    Selftest(SelftestArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Stabilize(_) => "stabilize",
            Command::Sample(_) => "sample",
            Command::AvalancheTails(_) => "avalanche-tails",
            Command::TopplingProb(_) => "toppling-prob",
            Command::Escape(_) => "escape",
            Command::TreeObs(_) => "tree-obs",
            Command::Waves(_) => "waves",
            Command::Census(_) => "census",
            Command::Fit(_) => "fit",
            Command::Selftest(_) => "selftest",
        }
    }
}

/// Options shared by every command. None of them changes the data files.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RunOpts {
    /// Output directory (default: $SANDPILE_OUT_DIR, then the current directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

impl Default for RunOpts {
    fn default() -> Self {
        RunOpts { out: None, workers: 1 }
    }
}

/// Options of replicated Monte Carlo commands.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct McOpts {
    #[arg(long, default_value_t = 10_000)]
    pub replicas: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Largest box, in sites.
    #[arg(long, default_value_t = sandpile_lab::experiments::DEFAULT_SITE_BUDGET)]
    pub site_budget: usize,
    /// Write a checkpoint here after every `--checkpoint-every` replicas.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub checkpoint_every: u64,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerChoice {
    Exact,
    Markov,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StabilizeArgs {
    #[arg(long = "d", alias = "dim")]
    pub dim: usize,
    #[arg(long = "L", alias = "half-side")]
    pub half_side: usize,
    /// Initial height at every site (ignored with --heights).
    #[arg(long, default_value_t = 0)]
    pub fill: u64,
    /// JSON file holding an array of heights in row-major order.
    #[arg(long)]
    pub heights: Option<PathBuf>,
    /// Sites, relative to the centre, receiving one grain each (e.g. "0,0;1,0").
    #[arg(long, default_value = "")]
    pub add: String,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long = "d", alias = "dim")]
    pub dim: usize,
    #[arg(long = "L", alias = "half-side")]
    pub half_side: usize,
    #[arg(long, value_enum, default_value_t = SamplerChoice::Exact)]
    pub sampler: SamplerChoice,
    /// Markov chain length (default 10|V|).
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[command(flatten)]
    pub mc: McOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TailsArgs {
    #[arg(long = "d", alias = "dim")]
    pub dim: usize,
    #[arg(long = "L", alias = "half-side")]
    pub half_side: usize,
    #[arg(long, value_enum, default_value_t = SamplerChoice::Exact)]
    pub sampler: SamplerChoice,
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Sites `y` (relative to the centre) for Dhar's formula, e.g. "0,0;1,0;4,0".
    #[arg(long)]
    pub probes: Option<String>,
    /// Queue/stack schedule comparison every this many replicas (0: off).
    #[arg(long, default_value_t = 1000)]
    pub abelian_every: u64,
    /// Write one JSON line per avalanche.
    #[arg(long)]
    pub records: bool,
    /// Tail fit window "lo:hi" applied to the radius tail.
    #[arg(long)]
    pub window: Option<String>,
    #[command(flatten)]
    pub mc: McOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TopplingArgs {
    #[arg(long = "d", alias = "dim")]
    pub dim: usize,
    #[arg(long = "L", alias = "half-side")]
    pub half_side: usize,
    /// Target sites relative to the centre, e.g. "4,0;8,0".
    #[arg(long)]
    pub z: String,
    /// Skip the sandpile route (tree route only).
    #[arg(long)]
    pub tree_only: bool,
    #[command(flatten)]
    pub mc: McOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EscapeArgs {
    #[arg(long = "d", alias = "dim")]
    pub dim: usize,
    /// Radii, e.g. "16,32,64,128,256".
    #[arg(long)]
    pub n: String,
    #[arg(long, default_value_t = 4)]
    pub box_factor: u32,
    #[command(flatten)]
    pub mc: McOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TreeObsArgs {
    #[arg(long = "d", alias = "dim")]
    pub dim: usize,
    #[arg(long = "L", alias = "half-side")]
    pub half_side: usize,
    /// Fit window "lo:hi" for the radius tail.
    #[arg(long)]
    pub window: Option<String>,
    #[command(flatten)]
    pub mc: McOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct WavesArgs {
    #[arg(long = "d", alias = "dim", default_value_t = 2)]
    pub dim: usize,
    /// Box half-sides, e.g. "4,8,16,32".
    #[arg(long = "Ls", alias = "half-sides")]
    pub half_sides: String,
    #[arg(long, default_value_t = 10)]
    pub k_max: u64,
    #[command(flatten)]
    pub mc: McOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CensusArgs {
    /// Rectangle "AxB" (or "AxBxC") anchored at the origin.
    #[arg(long, conflicts_with_all = ["dim", "half_side"])]
    pub grid: Option<String>,
    #[arg(long = "d", alias = "dim", requires = "half_side")]
    pub dim: Option<usize>,
    #[arg(long = "L", alias = "half-side")]
    pub half_side: Option<usize>,
    /// Marked site index for wave counts (default: the origin).
    #[arg(long)]
    pub marked: Option<usize>,
    /// Also write every recurrent and intermediate configuration as JSON lines.
    #[arg(long)]
    pub dump: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Tail CSV as written by the other commands.
    #[arg(long)]
    pub input: PathBuf,
    /// Threshold window "lo:hi".
    #[arg(long)]
    pub window: String,
    #[arg(long, default_value_t = sandpile_lab::tails::DEFAULT_BOOTSTRAP)]
    pub resamples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelftestArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunOpts,
}
