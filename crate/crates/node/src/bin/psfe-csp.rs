//! Cloud storage provider service.

use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use psfe_node::config::{self, CspConfig};
use psfe_node::identity::{load_party, load_public, role_dir, Directory};
use psfe_node::{net, CspService, ServiceOptions};

#[derive(Parser)]
#[command(about = "Run the CSP: stores the encrypted dataset and answers searches")]
struct Args {
    #[arg(long, env = "PSFE_CSP_ADDR")]
    listen: Option<String>,
    /// Root key directory holding csp/, ma/, curator/ and analyst*/.
    #[arg(long, env = "PSFE_KEYS")]
    keys: Option<PathBuf>,
    #[arg(long)]
    storage: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    psfe_node::init_logging();
    let args = Args::parse();
    let cfg: CspConfig = config::load(args.config.as_deref())?;
    let keys_dir = args.keys.or(cfg.keys_dir).ok_or("--keys is required")?;
    let listen = args.listen.or(cfg.listen).unwrap_or_else(|| "127.0.0.1:7401".into());
    let mut directory = Directory::load(&keys_dir)?;
    for extra in &cfg.analysts {
        directory.analysts.push(load_public(extra)?);
    }
    let options = ServiceOptions {
        storage: args.storage.or(cfg.storage_dir),
        window: cfg.window_secs.map(Duration::from_secs).unwrap_or(ServiceOptions::default().window),
        ..ServiceOptions::default()
    };
    let csp = CspService::new(load_party(&role_dir(&keys_dir, "csp"))?, directory, options)?;
    let listener = tokio::net::TcpListener::bind(&listen).await?;
    tracing::info!(addr = %listener.local_addr()?, dataset = csp.has_dataset(), "csp listening");
    net::serve_csp(listener, std::sync::Arc::new(csp)).await;
    Ok(())
}
