//! Generates long-term key pairs for one or more parties.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use psfe_core::crypto::gen_party_keys;
use psfe_node::identity::{role_dir, save_party};

#[derive(Parser)]
#[command(about = "Generate party key pairs under a key directory")]
struct Args {
    /// Root key directory; each role gets a subdirectory.
    #[arg(long, env = "PSFE_KEYS")]
    keys: PathBuf,
    /// Roles to generate, e.g. csp ma curator analyst.
    #[arg(required = true)]
    roles: Vec<String>,
    /// Replace existing keys.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut rng = rand::rngs::OsRng;
    for role in &args.roles {
        let dir = role_dir(&args.keys, role);
        if dir.exists() && !args.force {
            eprintln!("{} already exists (use --force to replace)", dir.display());
            return ExitCode::FAILURE;
        }
        if let Err(e) = save_party(&dir, &gen_party_keys(&mut rng)) {
            eprintln!("writing {}: {e}", dir.display());
            return ExitCode::FAILURE;
        }
        println!("role={role} dir={}", dir.display());
    }
    ExitCode::SUCCESS
}
