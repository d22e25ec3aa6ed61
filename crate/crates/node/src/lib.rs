//! The protocol's parties: the CSP and MA services, the curator and
//! analyst clients, a TCP transport and an in-process deployment.

pub mod analyst;
pub mod config;
pub mod csp;
pub mod curator;
pub mod error;
pub mod events;
pub mod identity;
pub mod local;
pub mod ma;
pub mod net;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use psfe_core::wire::{Clock, SystemClock, DEFAULT_WINDOW};

pub use analyst::{analyst_decrypt, Answer, AnalystSession, Progress, QueryOutcome};
pub use csp::CspService;
pub use curator::{AckStatus, CuratorSession, SetupBundle, SetupReport};
pub use error::{ClientError, ServiceError};
pub use identity::Directory;
pub use local::{LocalDeployment, LocalOptions};
pub use ma::{MaPolicy, MaService, MaStep, NoiseMode};

/// Settings shared by both services.
#[derive(Clone, Debug)]
pub struct ServiceOptions {
    /// Directory for persisted state; memory only when absent.
    pub storage: Option<PathBuf>,
    pub clock: Arc<dyn Clock>,
    /// Freshness window for inbound messages.
    pub window: Duration,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self { storage: None, clock: Arc::new(SystemClock), window: DEFAULT_WINDOW }
    }
}

/// Logs to stderr, filtered by `RUST_LOG` (default `info`).
pub fn init_logging() {
    let filter =
        tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}
