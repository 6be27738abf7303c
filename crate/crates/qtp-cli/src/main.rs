//! Batch scenario runner for the field-detection library: executes
//! config-driven pipelines into reproducible run directories, compares runs
//! for regression, and prints the scenario schema.

mod artifacts;
mod compare;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use run::{RunOptions, EXIT_IO};

const SCENARIO_SCHEMA: &str = include_str!("../../../docs/scenario.schema.json");

#[derive(Parser)]
#[command(
    name = "qtp",
    version,
    about = "Detection-probability scenario runner (batch, deterministic)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario config into a run directory.
    Run {
        /// Scenario config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Run directory to create (one run per directory).
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; overrides the config and any ambient default.
        #[arg(long)]
        threads: Option<usize>,
        /// Multiplier applied to every stage tolerance.
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
        /// Golden-file store; grids are checked against the entry for this
        /// scenario hash.
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Regenerate the golden entry instead of checking against it.
        #[arg(long, requires = "golden")]
        update_golden: bool,
    },
    /// Compare the binary grids of two run directories.
    Compare {
        /// Baseline run directory.
        run_a: PathBuf,
        /// Candidate run directory.
        run_b: PathBuf,
        /// Maximum allowed per-grid relative deviation.
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        /// Multiplier applied to the tolerance.
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
    /// Print the scenario config schema (JSON Schema) to stdout.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, threads, tolerance_scale, golden, update_golden } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("cannot read {}: {e}", config.display());
                    return ExitCode::from(EXIT_IO as u8);
                }
            };
            // Flag takes precedence over the config's thread count; the
            // fallback is one worker per logical CPU.
            let configured = config::Scenario::from_json(&text).ok().and_then(|s| s.numerics.threads);
            let n_threads = threads
                .or(configured)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(n_threads).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("thread pool: {e}");
                    return ExitCode::from(EXIT_IO as u8);
                }
            };
            let opts = RunOptions {
                tolerance_scale,
                threads: n_threads,
                golden: golden.as_deref(),
                update_golden,
            };
            match pool.install(|| run::run_scenario(&text, &out, &opts)) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("{e}");
                    e.exit_code()
                }
            }
        }
        Command::Compare { run_a, run_b, tolerance, tolerance_scale } => {
            compare::compare_runs(&run_a, &run_b, tolerance * tolerance_scale)
        }
        Command::Schema => {
            print!("{SCENARIO_SCHEMA}");
            0
        }
    };
    ExitCode::from(code as u8)
}
