//! Encrypts a dataset and outsources it to the CSP and MA.

use std::fs::{self, File};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use psfe_core::dataset::{load_csv, SchemaFile};
use psfe_core::wire::{SystemClock, DEFAULT_WINDOW};
use psfe_node::identity::{load_party, load_public, role_dir};
use psfe_node::net::{run_setup, DEFAULT_TIMEOUT};
use psfe_node::CuratorSession;

#[derive(Parser)]
#[command(about = "Curator client")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encrypt a CSV dataset and send it to both services.
    Setup {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, env = "PSFE_CSP_ADDR")]
        csp: String,
        #[arg(long, env = "PSFE_MA_ADDR")]
        ma: String,
        #[arg(long, env = "PSFE_KEYS")]
        keys: PathBuf,
    },
}

#[tokio::main]
async fn main() -> Result<ExitCode, Box<dyn std::error::Error>> {
    psfe_node::init_logging();
    let Command::Setup { data, schema, csp, ma, keys } = Args::parse().command;
    let schema = SchemaFile::parse(&fs::read_to_string(&schema)?)?;
    let ds = load_csv(File::open(&data)?, schema)?;
    let me = load_party(&role_dir(&keys, "curator"))?;
    let session = CuratorSession::new(
        me.signing,
        load_public(&role_dir(&keys, "csp"))?,
        load_public(&role_dir(&keys, "ma"))?,
        Arc::new(SystemClock),
        DEFAULT_WINDOW,
    );
    let report = run_setup(&session, &ds, &csp, &ma, DEFAULT_TIMEOUT).await?;
    println!("{}", report.to_line());
    Ok(if report.is_complete() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
