//! `proprio` — simulate quadruped sensor streams, run the estimator
//! variants, and compare trajectory accuracy.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "proprio",
    about = "Proprioceptive state estimation for quadruped robots",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the [scenario] block of a config.
    Simulate {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured estimator over the dataset.
    Estimate {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare estimate files against ground truth and print the table.
    Evaluate {
        /// Directory containing estimate_<variant>.csv files.
        #[arg(long)]
        est: PathBuf,
        /// Ground-truth CSV.
        #[arg(long)]
        truth: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out } => {
            proprio_cli::cmd_simulate(&config, out.as_deref()).map(|summary| {
                println!("{} frames written", summary.frames);
                for f in &summary.files {
                    println!("  {}", f.display());
                }
            })
        }
        Command::Estimate { config } => proprio_cli::cmd_estimate(&config).map(|files| {
            for f in &files {
                println!("  {}", f.display());
            }
        }),
        Command::Evaluate { est, truth } => {
            proprio_cli::cmd_evaluate(&est, &truth).map(|(table, _)| {
                print!("{table}");
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
