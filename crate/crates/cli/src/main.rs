//! `sae`: fitting, prediction, simultaneous intervals, multiple tests and
//! simulation studies for small area models from the command line.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sae_core::bootstrap::SigmaKind;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sae", version, about = "Small area estimation with simultaneous bootstrap intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for bootstrap and simulation; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model and write fit.json.
    Fit(DataArgs),
    /// Fit and write per-area EBPs to predictions.csv.
    Predict(DataArgs),
    /// Bootstrap simultaneous and individual intervals to intervals.csv.
    Sci(SciArgs),
    /// Max-type test of H0: B zeta = b, written to test.json.
    Test(TestArgs),
    /// Run a Monte Carlo study described by a scenario JSON file.
    Simulate(SimulateArgs),
    /// Survey-weighted direct estimators from unit data.
    Direct(DirectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Area,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaArg {
    G1,
    #[value(alias = "mse-plugin")]
    Plugin,
    #[value(alias = "mse-boot")]
    Boot,
    #[value(alias = "mse-boot-bc")]
    BootBc,
}

impl From<SigmaArg> for SigmaKind {
    fn from(s: SigmaArg) -> Self {
        match s {
            SigmaArg::G1 => SigmaKind::G1,
            SigmaArg::Plugin => SigmaKind::MsePlugin,
            SigmaArg::Boot => SigmaKind::MseBoot,
            SigmaArg::BootBc => SigmaKind::MseBootBc,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "area")]
    pub model: ModelArg,
    /// Area CSV (`area,y,N,<covariates>`) or unit CSV (`area,y,[m,]w,<covariates>`).
    #[arg(long)]
    pub data: PathBuf,
    /// Unit model: CSV `area,class,N` of population class sizes.
    #[arg(long = "class-sizes")]
    pub class_sizes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "SAE_SIMUL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Unit model: quadrature nodes per area.
    #[arg(long, default_value_t = 15)]
    pub q: usize,
    /// Unit model: Monte Carlo draws per area for the EBP.
    #[arg(long = "mc-draws", default_value_t = 2000)]
    pub mc_draws: usize,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BootArgs {
    #[arg(long = "B1", default_value_t = 1000)]
    pub b1: usize,
    /// Second-stage replicates; defaults to 1 for boot-bc and 0 otherwise.
    #[arg(long = "B2")]
    pub b2: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Defaults to g1 for the area model and boot for the unit model.
    #[arg(long, value_enum)]
    pub sigma: Option<SigmaArg>,
    #[arg(long = "non-studentized")]
    pub non_studentized: bool,
    #[arg(long = "max-failure-rate", default_value_t = 0.05)]
    pub max_failure_rate: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SciArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub boot: BootArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub boot: BootArgs,
    /// Contrast matrix B as headerless CSV, one row per contrast.
    #[arg(long, conflicts_with = "paired_diff")]
    pub contrast: Option<PathBuf>,
    /// Differences of consecutive area pairs (1-2, 3-4, ...).
    #[arg(long = "paired-diff")]
    pub paired_diff: bool,
    /// Target vector b, numbers separated by commas or newlines.
    #[arg(long, conflicts_with = "target_value")]
    pub target: Option<PathBuf>,
    /// Constant target for every contrast.
    #[arg(long = "target-value", default_value_t = 0.0)]
    pub target_value: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, env = "SAE_SIMUL_SEED")]
    pub seed: Option<u64>,
    /// Overrides the number of runs K.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "B1")]
    pub b1: Option<usize>,
    #[arg(long = "B2")]
    pub b2: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DirectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "class-sizes")]
    pub class_sizes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Sci(a) => commands::sci(&a),
        Command::Test(a) => commands::test(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Direct(a) => commands::direct(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
