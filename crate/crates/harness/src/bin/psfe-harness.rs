//! Runs an attack campaign, the differencing demo or the privacy ratio
//! experiment and prints a JSON report. Exits non-zero when a check fails.

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use psfe_harness::attack::{run_campaign, AttackName};
use psfe_harness::demo::run_differencing_demo;
use psfe_harness::dp::run_dp_ratio_experiment;
use psfe_harness::proxy::Strategy;
use serde::Serialize;

#[derive(Parser)]
#[command(about = "Adversary harness")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Seed for keys, noise and tampering positions.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Interpose on the links and tamper with one read.
    Attack {
        #[arg(long)]
        name: AttackName,
        /// passthrough, replay-m7, substitute-result, tamper-key,
        /// tamper-indices, tamper-function or replay-m9.
        #[arg(long)]
        strategy: Strategy,
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    Demo {
        #[command(subcommand)]
        demo: Demo,
    },
    /// Histogram a count query on two neighbouring datasets.
    DpRatio {
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
}

#[derive(Subcommand)]
enum Demo {
    /// Recover one patient's age from two averages.
    Differencing {
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
}

fn emit<T: Serialize>(report: &T, passed: bool) -> ExitCode {
    let mut out = std::io::stdout().lock();
    if let Err(e) = serde_json::to_writer_pretty(&mut out, report).map(|_| writeln!(out)) {
        eprintln!("writing report: {e}");
        return ExitCode::FAILURE;
    }
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.command {
        Command::Attack { name, strategy, runs } => {
            if strategy != Strategy::Passthrough && !name.strategies().contains(&strategy) {
                eprintln!("{strategy} is not a {name} strategy");
                return ExitCode::from(2);
            }
            run_campaign(strategy, runs, args.seed).await.map(|r| emit(&r, r.passed))
        }
        Command::Demo { demo: Demo::Differencing { epsilon, trials } } => {
            tokio::task::block_in_place(|| run_differencing_demo(epsilon, trials, args.seed)).map(|r| emit(&r, r.passed))
        }
        Command::DpRatio { epsilon, trials } => {
            tokio::task::block_in_place(|| run_dp_ratio_experiment(epsilon, trials, args.seed))
                .map(|r| emit(&r, r.passed))
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("{e}");
        ExitCode::FAILURE
    })
}
