//! `fms`: density evolution, threshold constants, tree simulation and SBM
//! recovery experiments from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const VERSION: &str = env!("FMS_VERSION");

#[derive(Debug)]
pub enum CliError {
    /// Invalid or missing parameters (exit code 2).
    Param(String),
    /// Reading or writing files failed (exit code 3).
    Io(String),
    /// The computation itself failed (exit code 1).
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Run(_) => 1,
            CliError::Param(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Param(m) => write!(f, "invalid parameters: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Run(m) => write!(f, "{m}"),
        }
    }
}

impl From<fms_core::Error> for CliError {
    fn from(e: fms_core::Error) -> Self {
        use fms_core::Error::*;
        match e {
            InvalidParameter(_) | DimensionMismatch { .. } | BudgetExceeded { .. } | NodeBudget { .. } => {
                CliError::Param(e.to_string())
            }
            _ => CliError::Run(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fms",
    version = VERSION,
    about = "Density evolution and simulation for Potts broadcasting on trees and the stochastic block model",
    after_help = "Any command accepts --config FILE with `key = value` lines; explicit flags override the file."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Iterate the BP operator and write the measure trace as CSV.
    #[command(args_override_self = true)]
    Evolve(EvolveArgs),
    /// Classify a (λ, d) grid against the uniqueness conditions.
    #[command(args_override_self = true)]
    Phase(PhaseArgs),
    /// Threshold constants C^L and C^H over a λ grid.
    #[command(args_override_self = true)]
    Constants(ConstantsArgs),
    /// Tree-side mutual-information integral over erasure surveys.
    #[command(args_override_self = true)]
    MiIntegral(MiArgs),
    /// Monte Carlo on explicit broadcast trees.
    #[command(subcommand)]
    Treesim(TreesimCmd),
    /// Stochastic block model experiments.
    #[command(subcommand)]
    Sbm(SbmCmd),
}

#[derive(Debug, Subcommand)]
enum TreesimCmd {
    /// Root information, error probability and χ² by exact sum-product.
    #[command(args_override_self = true)]
    Estimate(EstimateArgs),
    /// Majority-decider moments against the variance recursion.
    #[command(args_override_self = true)]
    Majority(MajorityArgs),
}

#[derive(Debug, Subcommand)]
enum SbmCmd {
    /// Sample a graph and its labels.
    #[command(args_override_self = true)]
    Generate(GenerateArgs),
    /// Belief propagation with side information.
    #[command(args_override_self = true)]
    RecoverSide(RecoverSideArgs),
    /// Anchor-aligned local belief propagation from an oracle initializer.
    #[command(args_override_self = true)]
    RecoverVanilla(RecoverVanillaArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RealizationArg {
    Auto,
    Exact,
    Sampled,
}

#[derive(Debug, Args, Serialize)]
pub struct EvolveArgs {
    #[arg(long)]
    pub q: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: f64,
    /// `regular:d` or `poisson:d`.
    #[arg(long)]
    pub offspring: String,
    /// Initial channel: identity, trivial, potts:λ, erasure:ε or fsc:p1,...
    #[arg(long, default_value = "identity")]
    pub init: String,
    /// Survey channel applied at every step.
    #[arg(long)]
    pub survey: Option<String>,
    /// Number of BP steps.
    #[arg(long, default_value_t = 30)]
    pub k: usize,
    /// Stop early once a step moves P_e + C + χ² by less than this.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Population size for sampled steps.
    #[arg(long, default_value_t = 10_000)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "auto")]
    pub realization: RealizationArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PhaseArgs {
    #[arg(long)]
    pub q: usize,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_grid: String,
    #[arg(long)]
    pub d_grid: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub q: usize,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_grid: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MiArgs {
    #[arg(long)]
    pub q: usize,
    #[arg(long)]
    pub a: f64,
    #[arg(long)]
    pub b: f64,
    #[arg(long, default_value = "0:1:0.1")]
    pub eps_grid: String,
    /// BP steps per grid point.
    #[arg(long, default_value_t = 60)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub q: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: f64,
    /// `regular:d` or `poisson:d`.
    #[arg(long)]
    pub offspring: String,
    /// Tree depth.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Channel observing the depth-k level.
    #[arg(long)]
    pub leaf: Option<String>,
    /// Channel observing every vertex of depth at most k.
    #[arg(long)]
    pub survey: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MajorityArgs {
    #[arg(long)]
    pub q: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: f64,
    /// Offspring count (regular) or mean (with --poisson).
    #[arg(long)]
    pub d: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub eta: f64,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Poisson(d) offspring instead of d-regular.
    #[arg(long)]
    pub poisson: bool,
    /// Depth at which the closed form is compared with the recursion.
    #[arg(long, default_value_t = 20)]
    pub ratio_depth: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GraphSource {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Read the graph from this file instead of sampling one.
    #[arg(long, requires = "labels")]
    pub graph: Option<PathBuf>,
    /// Ground-truth labels for --graph.
    #[arg(long, requires = "graph")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub q: usize,
    #[arg(long)]
    pub a: f64,
    #[arg(long)]
    pub b: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Graph file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Labels file.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RecoverSideArgs {
    #[command(flatten)]
    pub source: GraphSource,
    /// Side-information channel, e.g. erasure:0.7.
    #[arg(long)]
    pub survey: String,
    /// Message-passing rounds; default ⌊(log₁₀ n)^0.9⌋.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Population size for the density-evolution prediction.
    #[arg(long, default_value_t = 10_000)]
    pub cap: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RecoverVanillaArgs {
    #[command(flatten)]
    pub source: GraphSource,
    /// Oracle initializer: potts:η or matrix:r1;r2;...
    #[arg(long, default_value = "potts:0.4")]
    pub init: String,
    /// Ball radius; default ⌊(log₁₀ n)^0.9⌋.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Vertices to classify.
    #[arg(long, default_value_t = 2000)]
    pub sample: usize,
    /// Boundary channel estimate: mixture or anchors.
    #[arg(long, default_value = "mixture")]
    pub boundary: String,
    /// Reuse one global initial labeling for every vertex.
    #[arg(long)]
    pub reuse_global: bool,
    #[arg(long, default_value_t = 10_000)]
    pub cap: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("fms: {e}");
            return ExitCode::from(e.code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.cmd {
        Cmd::Evolve(a) => commands::evolve(a),
        Cmd::Phase(a) => commands::phase(a),
        Cmd::Constants(a) => commands::constants(a),
        Cmd::MiIntegral(a) => commands::mi_integral(a),
        Cmd::Treesim(TreesimCmd::Estimate(a)) => commands::treesim_estimate(a),
        Cmd::Treesim(TreesimCmd::Majority(a)) => commands::treesim_majority(a),
        Cmd::Sbm(SbmCmd::Generate(a)) => commands::sbm_generate(a),
        Cmd::Sbm(SbmCmd::RecoverSide(a)) => commands::sbm_recover_side(a),
        Cmd::Sbm(SbmCmd::RecoverVanilla(a)) => commands::sbm_recover_vanilla(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fms: {e}");
            ExitCode::from(e.code())
        }
    }
}
