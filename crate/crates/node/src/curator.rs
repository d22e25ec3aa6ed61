//! Curator side of setup: encrypt, outsource, check acknowledgements.

use std::sync::Arc;
use std::time::Duration;

use psfe_core::crypto::{hash, pk_encrypt, Digest, PublicIdentity, SigningKeyPair};
use psfe_core::dataset::{encrypt_dataset, PlainDataset};
use psfe_core::wire::{Clock, MessageKind, MessageSigner, Payload, Verifier};
use rand::{CryptoRng, RngCore};

use crate::error::ClientError;

/// Everything the curator sends during setup, plus what it expects back.
#[derive(Clone, Debug)]
pub struct SetupBundle {
    pub m1: Vec<u8>,
    pub m2: Vec<u8>,
    pub dataset_digest: Digest,
    pub lists_digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AckStatus {
    Verified,
    Failed(String),
}

impl AckStatus {
    fn from_result(r: Result<(), ClientError>) -> Self {
        match r {
            Ok(()) => AckStatus::Verified,
            Err(e) => AckStatus::Failed(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetupReport {
    pub csp: AckStatus,
    pub ma: AckStatus,
}

impl SetupReport {
    pub fn new(csp: Result<(), ClientError>, ma: Result<(), ClientError>) -> Self {
        Self { csp: AckStatus::from_result(csp), ma: AckStatus::from_result(ma) }
    }

    /// Setup is complete only once both acknowledgements verify.
    pub fn is_complete(&self) -> bool {
        self.csp == AckStatus::Verified && self.ma == AckStatus::Verified
    }

    pub fn to_line(&self) -> String {
        let show = |s: &AckStatus| match s {
            AckStatus::Verified => "verified".to_owned(),
            AckStatus::Failed(why) => format!("{why:?}"),
        };
        format!("complete={} csp={} ma={}", self.is_complete(), show(&self.csp), show(&self.ma))
    }
}

#[derive(Debug)]
pub struct CuratorSession {
    signer: MessageSigner,
    verifier: Verifier,
    csp: PublicIdentity,
    ma: PublicIdentity,
}

impl CuratorSession {
    pub fn new(
        signing: SigningKeyPair,
        csp: PublicIdentity,
        ma: PublicIdentity,
        clock: Arc<dyn Clock>,
        window: Duration,
    ) -> Self {
        Self { signer: MessageSigner::new(signing, clock.clone()), verifier: Verifier::new(window, clock), csp, ma }
    }

    /// Encrypts `ds` and builds the signed M1 and M2.
    pub fn prepare<R: RngCore + CryptoRng + ?Sized>(
        &self,
        ds: &PlainDataset,
        rng: &mut R,
    ) -> Result<SetupBundle, ClientError> {
        let output = encrypt_dataset(ds, rng)?;
        let eds = output.dataset.to_bytes();
        let lists = output.ma_lists(ds.schema()).to_bytes();
        let m1 = self.signer.sign_bytes(Payload::M1 { dataset: pk_encrypt(&self.csp.encryption, &eds, rng) })?;
        let m2 = self.signer.sign_bytes(Payload::M2 { lists: pk_encrypt(&self.ma.encryption, &lists, rng) })?;
        Ok(SetupBundle { m1, m2, dataset_digest: hash(&eds), lists_digest: hash(&lists) })
    }

    pub fn check_csp_ack(&self, bundle: &SetupBundle, reply: &[u8]) -> Result<(), ClientError> {
        self.check_ack(reply, MessageKind::M3, &self.csp, bundle.dataset_digest)
    }

    pub fn check_ma_ack(&self, bundle: &SetupBundle, reply: &[u8]) -> Result<(), ClientError> {
        self.check_ack(reply, MessageKind::M4, &self.ma, bundle.lists_digest)
    }

    fn check_ack(
        &self,
        reply: &[u8],
        kind: MessageKind,
        from: &PublicIdentity,
        expected: Digest,
    ) -> Result<(), ClientError> {
        let msg = self.verifier.verify(reply, &[kind, MessageKind::Refusal], &[from.verification])?;
        match msg.payload {
            Payload::M3 { dataset_digest: d } | Payload::M4 { lists_digest: d } if d == expected => Ok(()),
            Payload::M3 { .. } | Payload::M4 { .. } => {
                Err(ClientError::SetupFailed(format!("{kind:?} acknowledges a different digest")))
            }
            Payload::Refusal { class, detail, .. } => Err(ClientError::SetupFailed(format!("{class}: {detail}"))),
            _ => unreachable!("kind checked"),
        }
    }
}
