use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rwre_cli::{config, list_text, run, CliError, RunOptions};
use rwre_core::environment::validate_assumptions;

#[derive(Parser)]
#[command(name = "rwre", version, about = "Random walks in time-inhomogeneous random environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a config and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides `seed` in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (overrides RWRE_WORKERS and the config).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List experiment kinds and what they check.
    List,
    /// Check the model of a config against the standing assumptions.
    ValidateEnv {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, out, seed, workers } => {
            let loaded = config::load(&config)?;
            let summary = run(&loaded, &RunOptions { out, seed, workers })?;
            for e in &summary.manifest.experiments {
                println!("{:<16} {} ({:.2} s)", e.experiment, if e.passed { "pass" } else { "FAIL" }, e.seconds);
            }
            println!("wrote {}", summary.out.join("manifest.json").display());
            if summary.failures.is_empty() {
                Ok(())
            } else {
                Err(CliError::AssertionFailed(summary.failures))
            }
        }
        Command::List => {
            print!("{}", list_text());
            Ok(())
        }
        Command::ValidateEnv { config } => {
            let loaded = config::load(&config)?;
            let report = validate_assumptions(&loaded.config.model);
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            loaded.config.build_model()?;
            Ok(())
        }
    }
}
