use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsdde::cli::{parse_config, run_experiment, run_selftest, RunOptions, SelftestOptions};

/// Tamed Euler-Maruyama experiments for neutral stochastic delay equations.
#[derive(Debug, Parser)]
#[command(name = "nsdde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a key-value config file.
    Run {
        config: PathBuf,
        /// Worker threads for path simulation (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Exit nonzero when a hypothesis check fails.
        #[arg(long)]
        strict: bool,
        /// Output directory, overriding `out.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property suites.
    Selftest,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            workers,
            strict,
            out,
        } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::from(1);
                }
            };
            let cfg = match parse_config(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::from(1);
                }
            };
            if workers == Some(0) {
                eprintln!("error: --workers must be at least 1");
                return ExitCode::from(1);
            }
            let options = RunOptions {
                workers,
                strict,
                out_dir: out,
            };
            match run_experiment(&cfg, &options) {
                Ok(outcome) => {
                    let summary = outcome.summary();
                    if outcome.exit_code() == 0 {
                        print!("{summary}");
                    } else {
                        eprint!("{summary}");
                    }
                    ExitCode::from(outcome.exit_code())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Selftest => {
            let report = run_selftest(&SelftestOptions::default());
            print!("{report}");
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
