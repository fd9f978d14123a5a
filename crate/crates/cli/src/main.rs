use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Fixed-priority schedule simulation, cause-effect chain analysis and
/// deterministic data-flow treatment.
///
/// Exit codes: 0 ok, 2 input error, 3 infeasible system, 4 property
/// violation (RFI breach, anomaly in a treated system, bound violation).
#[derive(Parser, Debug)]
#[command(name = "ddf", version)]
pub struct Cli {
    /// Override the tick unit of input files (e.g. 1us, 100ns, 1ms).
    #[arg(long, global = true)]
    pub tick_unit: Option<ddf_core::TickUnit>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "DDF_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate benchmark systems and a manifest.
    Gen(GenArgs),
    /// Extract the data flow and write the transformed system.
    Transform(TransformArgs),
    /// Report MRT, mRT, jitter and memory for every chain.
    Analyze(AnalyzeArgs),
    /// Run a transformed system with sampled execution times.
    Simulate(SimulateArgs),
    /// Brute-force timing-anomaly search on one chain.
    Oracle(OracleArgs),
    /// Dump one schedule as CSV.
    Trace(TraceArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Generator configuration (TOML); defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target utilizations, comma separated (overrides the config).
    #[arg(long, value_delimiter = ',')]
    pub util: Vec<f64>,
    /// BCET factor (overrides the config).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Systems per utilization (overrides the config).
    #[arg(long)]
    pub sets: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TransformArgs {
    pub system: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Execution-time levels per job for the oracle.
    #[arg(long, default_value_t = 2)]
    pub levels: u32,
    /// Vary jobs released in the first N hyperperiods (plus the largest phase).
    #[arg(long, default_value_t = 1)]
    pub window_hyperperiods: u64,
    /// Vary jobs of the steady hyperperiod instead.
    #[arg(long)]
    pub steady: bool,
    /// Maximum number of enumerated assignments.
    #[arg(long, default_value_t = ddf_core::oracle::DEFAULT_BUDGET)]
    pub budget: u128,
}

impl ProbeArgs {
    pub fn window(&self) -> ddf_core::oracle::OracleWindow {
        if self.steady {
            ddf_core::oracle::OracleWindow::Steady
        } else {
            ddf_core::oracle::OracleWindow::Leading(self.window_hyperperiods)
        }
    }
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// System or transformed-system file.
    pub file: PathBuf,
    /// Transform a plain system before analysing it.
    #[arg(long)]
    pub treated: bool,
    /// Chain indices to analyse (default: all).
    #[arg(long = "chain")]
    pub chains: Vec<usize>,
    /// Skip the brute-force anomaly probe.
    #[arg(long)]
    pub no_probe: bool,
    #[command(flatten)]
    pub probe: ProbeArgs,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Transformed-system file.
    pub file: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub runs: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Run every job at its WCET.
    #[arg(long)]
    pub force_wcet: bool,
    /// Per-run reaction statistics (CSV).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Buffer occupancy summary (TOML).
    #[arg(long)]
    pub occupancy: Option<PathBuf>,
    /// Communication log of the first run (CSV).
    #[arg(long)]
    pub comm_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    /// System or transformed-system file.
    pub file: PathBuf,
    /// Chain index.
    #[arg(long, default_value_t = 0)]
    pub chain: usize,
    /// Transform a plain system before searching.
    #[arg(long)]
    pub treated: bool,
    #[command(flatten)]
    pub probe: ProbeArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum PolicyArg {
    Wcet,
    Bcet,
    Sampled,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    /// System or transformed-system file.
    pub file: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Wcet)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Simulated length in hyperperiods, on top of the largest phase.
    #[arg(long, default_value_t = 3)]
    pub window_hyperperiods: u64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn infeasible(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }

    pub fn violation(message: impl Into<String>) -> Self {
        Failure { code: 4, message: message.into() }
    }

    pub fn at(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure::input(format!("{}: {e}", path.display()))
    }
}

impl From<ddf_core::Error> for Failure {
    fn from(e: ddf_core::Error) -> Self {
        use ddf_core::Error as E;
        let code = match e {
            E::Unschedulable(..) | E::Stalled(_) | E::NonPeriodicRelation(_) | E::WindowTooShort(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
