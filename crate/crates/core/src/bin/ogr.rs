use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ogr::harness::{self, validate_seeds};
use ogr::selftest;
use ogr::{Error, ProblemSpec};

#[derive(Parser)]
#[command(
    name = "ogr",
    version,
    about = "Online gradient regression optimizer: experiments and self-checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write CSV traces plus a JSON summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Print a summary table for every experiment in a directory.
    Compare {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and central-difference gradients of a problem.
    Gradcheck {
        /// quadratic, saddle, rosenbrock, plateau or mlp.
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the oracle-equivalence and invariant suites.
    Selftest,
}

const CONFIG_ERROR: u8 = 1;
const RUN_FAILURE: u8 = 2;
const SELFTEST_FAILURE: u8 = 3;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seeds,
            parallel,
        } => run(config, out, seeds, parallel),
        Command::Compare { out } => match harness::compare(&out) {
            Ok(tables) if tables.is_empty() => {
                eprintln!("no *.summary.json files in {}", out.display());
                ExitCode::from(RUN_FAILURE)
            }
            Ok(tables) => {
                for t in tables {
                    println!("{}", t.render());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(RUN_FAILURE)
            }
        },
        Command::Gradcheck { problem, seed } => {
            let check = ProblemSpec::default_for(&problem)
                .and_then(|spec| selftest::gradient_check(spec, seed));
            match check {
                Ok(c) => {
                    println!("{}", c.line());
                    if c.passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(SELFTEST_FAILURE)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(CONFIG_ERROR)
                }
            }
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!(
                "{} of {} checks passed",
                checks.len() - failed,
                checks.len()
            );
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(SELFTEST_FAILURE)
            }
        }
    }
}

fn run(
    config: PathBuf,
    out: PathBuf,
    seeds: Option<Vec<u64>>,
    parallel: Option<usize>,
) -> ExitCode {
    let mut experiment = match harness::load_config(&config) {
        Ok(c) => c,
        Err(e @ Error::Io { .. }) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    if let Some(seeds) = seeds {
        if let Err(e) = validate_seeds(&seeds) {
            eprintln!("error: --seeds: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
        experiment.seeds = seeds;
    }
    let traces = match harness::run_experiment(&experiment, parallel) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let summary = match harness::write_outputs(&experiment, &traces, &out) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(RUN_FAILURE);
        }
    };
    let failed: Vec<_> = traces
        .iter()
        .filter_map(|t| t.summary.error.as_ref().map(|e| (t, e)))
        .collect();
    for (t, e) in &failed {
        eprintln!(
            "run {} seed {} failed: {e}",
            t.summary.optimizer, t.summary.seed
        );
    }
    println!("wrote {} runs; summary {}", traces.len(), summary.display());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(RUN_FAILURE)
    }
}
