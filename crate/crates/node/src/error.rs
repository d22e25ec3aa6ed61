use std::io;

use psfe_core::budget::BudgetError;
use psfe_core::crypto::Digest;
use psfe_core::dataset::DatasetError;
use psfe_core::wire::{ErrorClass, WireError};
use thiserror::Error;

/// Why a service refused a message.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("envelope does not decrypt")]
    Decryption,
    #[error("setup was already accepted")]
    DuplicateSetup,
    #[error("no dataset has been set up yet")]
    NotReady,
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error("index list references unknown key {0}")]
    UnknownKeyIndex(Digest),
    #[error("protocol state: {0}")]
    ProtocolState(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("peer unavailable: {0}")]
    Unavailable(String),
    #[error("storage: {0}")]
    Io(#[from] io::Error),
}

impl ServiceError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ServiceError::Wire(e) => e.class(),
            ServiceError::Decryption => ErrorClass::DecryptionFailed,
            ServiceError::DuplicateSetup => ErrorClass::DuplicateSetup,
            ServiceError::NotReady => ErrorClass::NotReady,
            ServiceError::Budget(BudgetError::Exhausted { .. }) => ErrorClass::BudgetExhausted,
            ServiceError::Budget(BudgetError::InvalidCharge(_)) => ErrorClass::InvalidData,
            ServiceError::UnknownKeyIndex(_) => ErrorClass::UnknownKeyIndex,
            ServiceError::ProtocolState(_) => ErrorClass::ProtocolState,
            ServiceError::InvalidData(_) => ErrorClass::InvalidData,
            ServiceError::Unavailable(_) | ServiceError::Io(_) => ErrorClass::Unavailable,
        }
    }
}

impl From<DatasetError> for ServiceError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::UnknownKeyIndex(d) => ServiceError::UnknownKeyIndex(d),
            other => ServiceError::InvalidData(other.to_string()),
        }
    }
}

/// Failures seen by the curator and analyst.
#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("envelope does not decrypt")]
    Decryption,
    #[error("protocol state: {0}")]
    ProtocolState(String),
    #[error("setup failed: {0}")]
    SetupFailed(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("transport: {0}")]
    Transport(#[from] io::Error),
    #[error("{0}")]
    Dataset(#[from] DatasetError),
}

impl ClientError {
    /// Error class for wire-level failures; `None` for local ones.
    pub fn class(&self) -> Option<ErrorClass> {
        match self {
            ClientError::Wire(e) => Some(e.class()),
            ClientError::Decryption => Some(ErrorClass::DecryptionFailed),
            ClientError::ProtocolState(_) => Some(ErrorClass::ProtocolState),
            ClientError::Timeout(_) | ClientError::Transport(_) => Some(ErrorClass::Unavailable),
            _ => None,
        }
    }
}
