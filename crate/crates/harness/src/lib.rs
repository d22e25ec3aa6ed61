//! Adversarial and statistical experiments against the protocol.
//!
//! [`proxy`] is a frame-aware man-in-the-middle that sits on the TCP links
//! between the parties. [`attack`] drives it against fresh deployments and
//! checks that every tampering is caught with the right error class.
//! [`demo`] and [`dp`] measure what the noisy functional keys buy.

pub mod attack;
pub mod demo;
pub mod dp;
pub mod proxy;
pub mod stats;

use psfe_node::ClientError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("deployment failed: {0}")]
    Deployment(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
