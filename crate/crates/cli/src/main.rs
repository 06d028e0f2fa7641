//! Command-line front end: scenario-driven solves, benchmarks and self-verification.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{run_bench, run_solve, run_verify, CliError, SolveArgs};
use pmchwt::solver::FormulationKind;
use scenario::{parse_formulations, ScenarioError};

#[derive(Parser)]
#[command(name = "pmchwt", version, about = "PMCHWT boundary element solver for dielectric scatterers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write reports and field exports.
    Solve {
        scenario: PathBuf,
        /// Override the scenario's formulation list with a single kind.
        #[arg(long)]
        formulation: Option<String>,
        /// Output directory (default: out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print DOF counts and predicted memory, write nothing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Compare formulations on a scenario's first incident wave.
    Bench {
        scenario: PathBuf,
        /// Comma-separated kinds, e.g. a_strong,aa_strong,da_strong (default: all six).
        #[arg(long)]
        formulations: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in verification suites.
    Verify {
        /// Smaller meshes; skips the Mie far-field comparison.
        #[arg(long)]
        quick: bool,
        /// Negative control: zero one BC function before the mass check.
        #[arg(long, hide = true)]
        corrupt_bc: bool,
    },
}

/// Caps rayon's pool at `SOLVER_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("SOLVER_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ScenarioError(format!("SOLVER_THREADS: expected a positive integer, got \"{value}\"")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Other(e.into()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Solve { scenario, formulation, out, dry_run } => {
            let formulation: Option<FormulationKind> = formulation
                .map(|f| parse_formulations([f.as_str()], "--formulation").map(|k| k[0]))
                .transpose()?;
            run_solve(&SolveArgs { scenario, formulation, out, dry_run })
        }
        Command::Bench { scenario, formulations, out } => {
            let kinds = formulations
                .map(|f| parse_formulations(f.split(','), "--formulations"))
                .transpose()?;
            run_bench(&scenario, kinds, &out).map(|_| ())
        }
        Command::Verify { quick, corrupt_bc } => run_verify(quick, corrupt_bc),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
