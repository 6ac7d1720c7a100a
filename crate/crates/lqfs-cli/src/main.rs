//! `lqfs`: analysis and simulation of many-server systems on tree-structured
//! compatibility graphs under longest-queue/freest-server routing.
//!
//! Subcommands map onto the library layers: `validate`/`analyze` cover the
//! static planning problem and the drift-matrix stability verdicts, `fluid`
//! integrates deterministic or diffusion trajectories, `simulate` runs one
//! finite-r replication, and `sweep` aggregates replication ensembles over
//! an r-grid. Outputs are JSON (sorted keys) and CSV.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lqfs::model::SystemSpec;
use lqfs::sim::Engine;
use lqfs::registry;

mod report;
mod sweep;
mod trajectories;

/// Failure with the process exit code it maps to: 2 bad input, 3 CRP
/// violation, 4 numerical abort, 1 anything else.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<lqfs::Error> for Failure {
    fn from(e: lqfs::Error) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

pub fn usage_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

#[derive(Parser)]
#[command(name = "lqfs", version)]
#[command(about = "Plan, analyze, and simulate tree-structured many-server systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the system specification comes from: a JSON file or the registry.
#[derive(Args)]
struct SpecSource {
    /// Path to a system specification (JSON).
    #[arg(long, conflicts_with = "example", required_unless_present = "example")]
    config: Option<PathBuf>,

    /// Name of a bundled example; see `examples list`.
    #[arg(long)]
    example: Option<String>,
}

impl SpecSource {
    fn load(&self) -> Result<SystemSpec<f64>, Failure> {
        if let Some(name) = &self.example {
            return registry::get(name).ok_or_else(|| {
                usage_error(format!(
                    "unknown example '{name}'; run `lqfs examples list`"
                ))
            });
        }
        let path = self.config.as_ref().expect("clap enforces the source");
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage_error(format!("{}: {e}", path.display())))?;
        Ok(SystemSpec::from_json(&text)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a specification: structure, rates, and resource pooling.
    Validate {
        #[command(flatten)]
        source: SpecSource,
    },

    /// Full static report: planning solution, drift matrices, spectra,
    /// and stability verdicts, as one JSON document.
    Analyze {
        #[command(flatten)]
        source: SpecSource,

        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Deterministic fluid or diffusion trajectories, as CSV.
    Fluid(trajectories::FluidArgs),

    /// One finite-r replication of the Markov chain, as CSV.
    Simulate(trajectories::SimulateArgs),

    /// Replication ensembles over an r-grid, aggregated into one JSON
    /// summary with standard errors and trend verdicts.
    Sweep(sweep::SweepArgs),

    /// The bundled example systems.
    #[command(subcommand)]
    Examples(ExamplesCommand),
}

#[derive(Subcommand)]
enum ExamplesCommand {
    /// Print each example's name and a one-line description.
    List,
    /// Print an example's specification as JSON.
    Show { name: String },
}

/// Draws a seed when the user gave none, announcing it on stderr so the
/// run can be reproduced.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s: u64 = rand::random();
            eprintln!("seed: {s}");
            s
        }
    }
}

/// Writes to the path, or stdout when none is given.
pub fn emit(output: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn parse_engine(s: &str) -> Result<Engine, Failure> {
    s.parse::<Engine>().map_err(usage_error)
}

fn cap_threads() {
    if let Ok(v) = std::env::var("LQFS_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                // A second initialization (tests in one process) is fine.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { source } => report::validate(&source.load()?),
        Command::Analyze { source, output } => report::analyze(&source.load()?, output.as_ref()),
        Command::Fluid(args) => trajectories::fluid(args),
        Command::Simulate(args) => trajectories::simulate(args),
        Command::Sweep(args) => sweep::sweep(args),
        Command::Examples(ExamplesCommand::List) => {
            for &name in registry::NAMES {
                println!("{name}\t{}", registry::describe(name).unwrap());
            }
            Ok(())
        }
        Command::Examples(ExamplesCommand::Show { name }) => {
            let spec = registry::get(&name).ok_or_else(|| {
                usage_error(format!("unknown example '{name}'; run `lqfs examples list`"))
            })?;
            println!("{}", spec.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    cap_threads();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
