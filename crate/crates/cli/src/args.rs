//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qcinf_core::tensor_core::DEFAULT_TAU;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "qcinf", version, about = "Dilation calculus, residual maps, L^p continuation and variation batteries for quasiconformal immersions")]
pub struct Cli {
    /// Worker threads (default: available parallelism). QCINF_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Record wall-clock timings in summaries and the run manifest.
    #[arg(long, global = true)]
    pub timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Check K_P, the reduced K_PP and dilation invariants on random gradients.
    Verify(VerifyArgs),
    /// Per-node residuals of the ∞-system over a sampled map.
    Residual(ResidualArgs),
    /// Phase labels, interface mask and constant-dilation check.
    Phase(PhaseArgs),
    /// L^p continuation towards an ∞-minimal field.
    Solve(SolveArgs),
    /// Rank-one or normal-free variation battery.
    Vary(VaryArgs),
    /// Identity versus the power map on the punctured disc.
    Counterexample(CounterexampleArgs),
    /// Analytic map catalog.
    Maps {
        #[command(subcommand)]
        action: MapsAction,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapsAction {
    /// List catalog maps with default parameters.
    List {
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultArg {
    ESign,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Number of random gradients.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative rank threshold.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Output prefix for `<out>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mutation smoke test: corrupt the named formula.
    #[arg(long, hide = true, value_enum)]
    pub inject_fault: Option<FaultArg>,
}

/// Where a sampled map comes from.
#[derive(Debug, Args, Serialize)]
pub struct SourceArgs {
    /// Catalog map name (see `qcinf maps list`).
    #[arg(long, conflicts_with = "field", required_unless_present = "field")]
    pub map: Option<String>,
    /// Map parameters as `key=value,...`.
    #[arg(long, default_value = "")]
    pub params: String,
    /// Shorthand for `gamma=G` in the parameters.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Sampled field file (JSON or CSV); jets by finite differences.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Points per axis for catalog maps.
    #[arg(long, default_value_t = 65)]
    pub grid: usize,
    /// Lower box corner, comma separated (default: the map's box).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lo: Option<Vec<f64>>,
    /// Upper box corner, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub hi: Option<Vec<f64>>,
    /// Relative rank threshold.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QForm {
    /// tangential + K · normal
    WithDilation,
    /// tangential + normal
    Renormalized,
}

#[derive(Debug, Args, Serialize)]
pub struct ResidualArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Output prefix: `<out>.csv`, `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Weighting of the normal part in q_∞.
    #[arg(long, value_enum, default_value = "with-dilation")]
    pub q_form: QForm,
    /// Also report the p-system residual for this exponent.
    #[arg(long)]
    pub p: Option<f64>,
    /// Report the p-system residual divided by (p − 1)K^{p−2}.
    #[arg(long, requires = "p")]
    pub rescaled: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PhaseArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Output prefix: `<out>.csv`, `<out>.pgm` (or `<out>.z<k>.pgm`), `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// z index of the image slice for 3-d grids (default: middle).
    #[arg(long)]
    pub slice: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    /// JSON configuration (schema 1).
    #[arg(long)]
    pub config: PathBuf,
    /// Output prefix: `<out>.json` summary and `<out>.field.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Override `points`.
    #[arg(long)]
    pub points: Option<usize>,
    /// Override `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `restarts`.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Override `max_iterations`.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Override `self_test`.
    #[arg(long)]
    pub self_test: Option<usize>,
    /// Override `p_schedule`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p_schedule: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VaryKind {
    RankOne,
    Normal,
}

#[derive(Debug, Args, Serialize)]
pub struct VaryArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum)]
    pub kind: VaryKind,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix: `<out>.csv`, `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Ball radius range `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.02, 0.1])]
    pub radius: Vec<f64>,
    /// Amplitude range `lo,hi` (log-uniform).
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1e-3, 1e-1])]
    pub delta: Vec<f64>,
    /// Rank-one only: also run the directed search at this centre (`auto`: the argmax of K).
    #[arg(long)]
    pub directed: Option<String>,
    /// Exit 1 when a trial decreases the sup of the dilation.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct CounterexampleArgs {
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Rank-one trials run against the power map.
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix for `<out>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
