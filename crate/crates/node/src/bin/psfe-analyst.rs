//! Runs differentially private queries against a deployment.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use psfe_core::wire::{FunctionDescriptor, SystemClock, DEFAULT_WINDOW};
use psfe_node::identity::{load_party, load_public, role_dir};
use psfe_node::net::{run_query, DEFAULT_TIMEOUT};
use psfe_node::{AnalystSession, QueryOutcome};

#[derive(Parser)]
#[command(about = "Analyst client")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sum or average of a numerical variable over rows containing a value.
    Query {
        #[arg(long)]
        value: String,
        #[arg(long)]
        variable: String,
        #[arg(long = "fn", default_value = "sum")]
        function: FunctionDescriptor,
        #[arg(long, env = "PSFE_MA_ADDR")]
        ma: String,
        #[arg(long, env = "PSFE_CSP_ADDR")]
        csp: String,
        #[arg(long, env = "PSFE_KEYS")]
        keys: PathBuf,
        /// Subdirectory of the key directory holding this analyst's keys.
        #[arg(long, default_value = "analyst")]
        name: String,
    },
}

#[tokio::main]
async fn main() -> Result<ExitCode, Box<dyn std::error::Error>> {
    psfe_node::init_logging();
    let Command::Query { value, variable, function, ma, csp, keys, name } = Args::parse().command;
    let session = AnalystSession::new(
        load_party(&role_dir(&keys, &name))?,
        load_public(&role_dir(&keys, "csp"))?.verification,
        load_public(&role_dir(&keys, "ma"))?.verification,
        Arc::new(SystemClock),
        DEFAULT_WINDOW,
    );
    let outcome = run_query(&session, &value, &variable, function, &ma, &csp, DEFAULT_TIMEOUT).await?;
    println!("{}", outcome.to_line());
    Ok(match outcome {
        QueryOutcome::Refused { .. } => ExitCode::FAILURE,
        _ => ExitCode::SUCCESS,
    })
}
