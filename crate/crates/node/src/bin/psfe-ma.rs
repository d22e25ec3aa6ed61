//! Mediating authority service.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use psfe_core::budget::BudgetCap;
use psfe_node::config::{self, MaConfig};
use psfe_node::identity::{load_party, load_public, role_dir, Directory};
use psfe_node::net::{self, MaNode, DEFAULT_TIMEOUT};
use psfe_node::{MaPolicy, MaService, ServiceOptions};

#[derive(Parser)]
#[command(about = "Run the MA: resolves search tokens and issues noisy functional keys")]
struct Args {
    #[arg(long, env = "PSFE_MA_ADDR")]
    listen: Option<String>,
    /// Address of the CSP service.
    #[arg(long, env = "PSFE_CSP_ADDR")]
    csp: Option<String>,
    #[arg(long, env = "PSFE_KEYS")]
    keys: Option<PathBuf>,
    #[arg(long)]
    storage: Option<PathBuf>,
    /// Privacy parameter charged per query.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Total epsilon each analyst may spend; unlimited when absent.
    #[arg(long)]
    budget_cap: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    psfe_node::init_logging();
    let args = Args::parse();
    let cfg: MaConfig = config::load(args.config.as_deref())?;
    let keys_dir = args.keys.or(cfg.keys_dir).ok_or("--keys is required")?;
    let listen = args.listen.or(cfg.listen).unwrap_or_else(|| "127.0.0.1:7402".into());
    let csp_addr = args.csp.or(cfg.csp_addr).unwrap_or_else(|| "127.0.0.1:7401".into());
    let mut directory = Directory::load(&keys_dir)?;
    for extra in &cfg.analysts {
        directory.analysts.push(load_public(extra)?);
    }
    let options = ServiceOptions {
        storage: args.storage.or(cfg.storage_dir),
        window: cfg.window_secs.map(Duration::from_secs).unwrap_or(ServiceOptions::default().window),
        ..ServiceOptions::default()
    };
    let policy = MaPolicy {
        epsilon: args.epsilon.or(cfg.default_epsilon).unwrap_or(1.0),
        budget: args.budget_cap.or(cfg.budget_cap).map_or(BudgetCap::Unlimited, BudgetCap::Limited),
        ..MaPolicy::default()
    };
    let ma = MaService::new(load_party(&role_dir(&keys_dir, "ma"))?, directory, options, policy)?;
    let listener = tokio::net::TcpListener::bind(&listen).await?;
    tracing::info!(addr = %listener.local_addr()?, csp = %csp_addr, lists = ma.has_lists(), "ma listening");
    net::serve_ma(listener, Arc::new(MaNode::new(Arc::new(ma), csp_addr, DEFAULT_TIMEOUT))).await;
    Ok(())
}
