//! `diging-pep`: worst-case certificates and simulations for DIGing with
//! local updates.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use diging_pep::graph::TopologyKind;
use diging_pep::Error;

use crate::config::UsageError;

#[derive(Parser, Debug)]
#[command(name = "diging-pep", version, about = "Worst-case analysis and simulation of DIGing with local updates")]
struct Cli {
    /// Maximum number of concurrent solver/simulator workers.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Omit wall-clock timings so reruns produce identical files.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Worst-case programs.
    #[command(subcommand)]
    Pep(PepCommand),
    /// Concrete runs of the algorithm.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Check a certificate against simulated random instances.
    Verify(VerifyArgs),
    /// Print a communication graph and its mixing matrix.
    Graph(GraphArgs),
}

#[derive(Subcommand, Debug)]
enum PepCommand {
    /// Solve and certify one worst-case program.
    Solve(PepArgs),
    /// Grid search over the step size for several values of tau.
    Sweep(PepSweepArgs),
    /// Write the program in text form without solving it.
    Export(PepArgs),
}

#[derive(Subcommand, Debug)]
enum SimCommand {
    /// Simulate one run and write its error curve.
    Run(SimRunArgs),
    /// Empirical step-size search per tau.
    Sweep(SimSweepArgs),
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct NetArgs {
    #[arg(long)]
    pub topology: Option<TopologyKind>,
    /// Number of agents.
    #[arg(long)]
    pub n: Option<usize>,
    /// Edge probability for erdos_renyi.
    #[arg(long)]
    pub edge_prob: Option<f64>,
    #[arg(long)]
    pub graph_seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct ClassArgs {
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub l: Option<f64>,
    /// Bound on the initial distance to the minimiser.
    #[arg(long)]
    pub r0: Option<f64>,
    /// Bound on the distance between local and global minimisers.
    #[arg(long)]
    pub rstar: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct GridArgs {
    #[arg(long)]
    pub alpha_lo: Option<f64>,
    #[arg(long)]
    pub alpha_hi: Option<f64>,
    #[arg(long)]
    pub resolution: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct PepArgs {
    /// JSON config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub class: ClassArgs,
    /// Local updates per communication round.
    #[arg(long)]
    pub tau: Option<usize>,
    /// Communication rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Always build the full program, even for symmetric graphs.
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct PepSweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub class: ClassArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Comma-separated list, default 1,2,3,4.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<usize>>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub full: bool,
    /// Sweep table; stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Preset {
    /// Two scalar quadratics with a known consensus pathology.
    Motivating,
    /// Least squares with prescribed spectra.
    Regression,
    /// Random quadratics satisfying the radius bounds.
    Quadratic,
    /// Instance read from a CSV bundle directory.
    Bundle,
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct ProblemArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Bundle directory for `--preset bundle`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Samples per agent (regression).
    #[arg(long)]
    pub m: Option<usize>,
    /// Dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Instance seed; required for random presets.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct SimRunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub class: ClassArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Error curve CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct SimSweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub class: ClassArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<usize>>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Directory for the sweep table, summary and per-tau curves.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub class: ClassArgs,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of random instances, default 100.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dimension of sampled instances, default 8.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Use this value instead of solving the program (testing aid).
    #[arg(long)]
    pub certificate: Option<f64>,
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default)]
pub struct GraphArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Distinguished failure of a solve that ran to completion.
#[derive(Debug)]
pub struct SolverFailure(pub String);

impl std::fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SolverFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    if err.downcast_ref::<SolverFailure>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidParameter(_) | Error::InvalidPair(_) | Error::InvalidInput(_) | Error::Parse { .. }) => 2,
        Some(Error::Solver(_) | Error::CertificationFailed { .. }) => 3,
        Some(Error::BoundViolated { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let opts = commands::Opts {
        timing: !cli.no_timing,
    };
    let result = match cli.command {
        Command::Pep(PepCommand::Solve(a)) => commands::pep_solve(&a, opts),
        Command::Pep(PepCommand::Sweep(a)) => commands::pep_sweep(&a, opts),
        Command::Pep(PepCommand::Export(a)) => commands::pep_export(&a),
        Command::Sim(SimCommand::Run(a)) => commands::sim_run(&a),
        Command::Sim(SimCommand::Sweep(a)) => commands::sim_sweep(&a, opts),
        Command::Verify(a) => commands::verify(&a),
        Command::Graph(a) => commands::graph(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
