//! `spamm`: generate inputs, multiply, solve, reorder, simulate and sweep.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spamm_core::matgen::DecayKind;
use spamm_core::sim::StaticStrategy;
use spamm_core::Error as CoreError;

/// Exit status for argument and input validation failures.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit status for file system failures.
pub const EXIT_IO: u8 = 3;
/// Exit status for anything else.
pub const EXIT_OTHER: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "spamm", version, about = "Sparse approximate matrix multiply toolkit")]
pub struct Cli {
    /// Report format on stdout (`mm` prints the result matrix instead)
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Where to write the run manifest (default: `<first output>.manifest.json`)
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Mm,
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic matrices and point clouds
    #[command(subcommand)]
    Gen(GenCommand),
    /// Multiply two MatrixMarket matrices under a SpAMM tolerance
    Multiply(MultiplyArgs),
    /// Compute a density matrix by second-order spectral projection
    Sp2(Sp2Args),
    /// Space-filling-curve ordering of an XYZ point cloud
    Order(OrderArgs),
    /// Simulate the tiered task decomposition of one product
    Sim(SimArgs),
    /// Parameter sweeps emitted as CSV
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Norm check and magnitude histogram of a matrix
    Stats(StatsArgs),
    /// Rerun the command recorded in a manifest
    Replay(ReplayArgs),
}

#[derive(Subcommand, Debug)]
pub enum GenCommand {
    /// Symmetric matrix with exponential or algebraic off-diagonal decay
    Decay(GenDecayArgs),
    /// Synthetic molecular-cluster Hamiltonian and its point cloud
    Cluster(GenClusterArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Exponential,
    Algebraic,
}

impl From<KindArg> for DecayKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Exponential => DecayKind::Exponential,
            KindArg::Algebraic => DecayKind::Algebraic,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenDecayArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Exponential)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct GenClusterArgs {
    #[arg(long)]
    pub molecules: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 25)]
    pub rows_per_molecule: usize,
    #[arg(long, default_value_t = 10)]
    pub occupied_per_molecule: usize,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub length_scale: Option<f64>,
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub min_gap: Option<f64>,
    /// Reorder molecules along a Hilbert curve before writing
    #[arg(long)]
    pub hilbert: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Molecule centres as XYZ
    #[arg(long)]
    pub xyz: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct NumericArgs {
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 16)]
    pub block_size: usize,
    #[arg(long, default_value_t = 256)]
    pub chunk_size: usize,
    /// Worker threads for tasked multiplies
    #[arg(long, env = "SPAMM_WORKERS")]
    pub workers: Option<usize>,
    /// Fixed accumulation order (bit-reproducible tasked products)
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub deterministic: bool,
    #[arg(long, value_enum, default_value_t = ModeArg::Serial)]
    pub mode: ModeArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Serial,
    Tasked,
}

#[derive(Args, Debug, Serialize)]
pub struct MultiplyArgs {
    #[arg(long)]
    pub a: PathBuf,
    /// Right operand (defaults to `a`)
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// ProductStats JSON file
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct Sp2Args {
    #[arg(long)]
    pub f: PathBuf,
    #[arg(long)]
    pub n_occ: usize,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub idem_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub trace_rel_tol: f64,
    /// Projector as MatrixMarket
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Solve report JSON file
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveArg {
    Hilbert,
    Morton,
}

#[derive(Args, Debug, Serialize)]
pub struct OrderArgs {
    #[arg(long)]
    pub xyz: PathBuf,
    /// Rows per point for labels not listed in `--multiplicity`
    #[arg(long, default_value_t = 1)]
    pub rows_per_point: usize,
    /// Per-label rows, e.g. `O=9,H=8`
    #[arg(long, value_delimiter = ',')]
    pub multiplicity: Vec<String>,
    #[arg(long, default_value_t = spamm_core::ordering::DEFAULT_ORDER)]
    pub order: u32,
    #[arg(long, value_enum, default_value_t = CurveArg::Hilbert)]
    pub curve: CurveArg,
    /// One-based point permutation JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Matrix to reorder with the expanded row permutation
    #[arg(long, requires = "reordered")]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub reordered: Option<PathBuf>,
    /// Magnitude threshold for the locality metric
    #[arg(long, default_value_t = 1e-8)]
    pub threshold: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Block,
    RoundRobin,
}

impl From<StrategyArg> for StaticStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Block => StaticStrategy::Block,
            StrategyArg::RoundRobin => StaticStrategy::RoundRobin,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CostArgs {
    /// Seconds per flop; measured from the leaf kernel when omitted
    #[arg(long)]
    pub per_flop: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub per_message: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub per_byte: f64,
    #[arg(long, default_value_t = 0.0)]
    pub phase_overhead: f64,
    /// Weight of co-located bytes in greedy placement (default: per-byte seconds)
    #[arg(long)]
    pub comm_weight: Option<f64>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Block)]
    pub strategy: StrategyArg,
}

#[derive(Args, Debug, Serialize)]
pub struct SimArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 16)]
    pub block_size: usize,
    /// Chunk edge length of the leaf task tier
    #[arg(long, default_value_t = 64)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 8)]
    pub p: usize,
    #[command(flatten)]
    pub cost: CostArgs,
    /// Keep per-chare measured loads in the report
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum SweepCommand {
    /// SP2 energy error and work against tau
    Tau(SweepTauArgs),
    /// Leaf products of `A*A` against matrix size for decay matrices
    N(SweepNArgs),
    /// Simulated makespan and efficiency against core count, with a scaling fit
    P(SweepPArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SweepTauArgs {
    #[arg(long)]
    pub f: PathBuf,
    #[arg(long)]
    pub n_occ: usize,
    #[arg(long, value_delimiter = ',', default_value = "1e-6,1e-8,1e-10")]
    pub taus: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    pub block_size: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepNArgs {
    #[arg(long, value_delimiter = ',', default_value = "512,1024,2048,4096")]
    pub ns: Vec<usize>,
    #[arg(long, value_enum, default_value_t = KindArg::Exponential)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub tau: f64,
    #[arg(long, default_value_t = 16)]
    pub block_size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepPArgs {
    /// Matrix whose square is simulated (omit with `--inject-ts/--inject-tp`)
    #[arg(long, required_unless_present = "inject_ts")]
    pub a: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 16)]
    pub block_size: usize,
    #[arg(long, default_value_t = 64)]
    pub chunk_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    pub ps: Vec<usize>,
    #[command(flatten)]
    pub cost: CostArgs,
    /// Serial time of synthetic timings `T = ts + tp / P`
    #[arg(long, requires = "inject_tp")]
    pub inject_ts: Option<f64>,
    #[arg(long, requires = "inject_ts")]
    pub inject_tp: Option<f64>,
    /// Fit JSON file
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub block_size: usize,
    /// Ascending bin edges
    #[arg(long, value_delimiter = ',', default_value = "0,1e-8,1e-6,1e-2,1")]
    pub bins: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ReplayArgs {
    pub manifest_path: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Io(_) => EXIT_IO,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if cause.downcast_ref::<clap::Error>().is_some() || cause.downcast_ref::<commands::Invalid>().is_some() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    match commands::run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
