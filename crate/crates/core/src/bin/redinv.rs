use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use redinv::cli::{self, Command};

/// Reduced-model state estimation experiments.
#[derive(Parser)]
#[command(name = "redinv", version)]
struct Args {
    /// Worker threads (REDINV_THREADS overrides; default 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the training (and held-out) snapshots.
    Snapshots { config: PathBuf },
    /// Greedy sensor placement (omp_place, nested, geim).
    Place { config: PathBuf },
    /// Fit a PBDW operator or an optimal affine map.
    Fit { config: PathBuf },
    /// Reconstruct states and tabulate errors.
    Estimate { config: PathBuf },
    /// Build a piecewise affine family.
    Family { config: PathBuf },
    /// Estimator comparison table.
    Benchmark { config: PathBuf },
    /// Summarize the runs of a results directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let threads = match cli::resolve_threads(args.threads) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("could not configure the thread pool: {e}");
    }

    let (command, config) = match args.cmd {
        Cmd::Report { dir } => {
            return match cli::report(&dir) {
                Ok((table, _)) => {
                    print!("{table}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(cli::exit_code(&e) as u8)
                }
            };
        }
        Cmd::Snapshots { config } => (Command::Snapshots, config),
        Cmd::Place { config } => (Command::Place, config),
        Cmd::Fit { config } => (Command::Fit, config),
        Cmd::Estimate { config } => (Command::Estimate, config),
        Cmd::Family { config } => (Command::Family, config),
        Cmd::Benchmark { config } => (Command::Benchmark, config),
    };
    match cli::run(command, &config, threads) {
        Ok(outcome) => {
            println!("{}", outcome.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error in `{}`: {e}", command.name());
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
