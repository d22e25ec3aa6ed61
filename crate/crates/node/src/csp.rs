//! Cloud storage provider: holds the encrypted dataset and runs searches.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use psfe_core::crypto::{hash, hash_concat, pk_decrypt, Digest, EncryptionKeyPair, PartyKeys, PublicIdentity};
use psfe_core::dataset::EncryptedDataset;
use psfe_core::wire::{
    MessageKind, MessageSigner, Payload, ProtocolMessage, QueryId, ResultList, Verifier, WireError,
};

use crate::error::ServiceError;
use crate::events::EventLog;
use crate::identity::Directory;
use crate::ServiceOptions;

pub const EDS_FILE: &str = "eds.psfe";

#[derive(Debug)]
struct StoredDataset {
    digest: Digest,
    dataset: EncryptedDataset,
}

/// An M7 waiting for its analyst to collect it.
#[derive(Debug)]
struct Parcel {
    analyst: Digest,
    message: Vec<u8>,
}

#[derive(Debug)]
pub struct CspService {
    signer: MessageSigner,
    encryption: EncryptionKeyPair,
    verifier: Verifier,
    directory: Directory,
    storage: Option<PathBuf>,
    dataset: RwLock<Option<Arc<StoredDataset>>>,
    outbox: Mutex<HashMap<QueryId, Parcel>>,
    events: EventLog,
}

impl CspService {
    /// Creates the service, reloading a previously stored dataset if the
    /// storage directory holds one.
    pub fn new(keys: PartyKeys, directory: Directory, options: ServiceOptions) -> Result<Self, ServiceError> {
        let dataset = match &options.storage {
            Some(dir) => load_dataset(dir)?,
            None => None,
        };
        Ok(Self {
            signer: MessageSigner::new(keys.signing, options.clock.clone()),
            encryption: keys.encryption,
            verifier: Verifier::new(options.window, options.clock),
            directory,
            storage: options.storage,
            dataset: RwLock::new(dataset.map(Arc::new)),
            outbox: Mutex::new(HashMap::new()),
            events: EventLog::new("csp"),
        })
    }

    pub fn public(&self) -> PublicIdentity {
        PublicIdentity { verification: self.signer.verification_key(), encryption: self.encryption.public_key() }
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn has_dataset(&self) -> bool {
        self.dataset.read().expect("dataset lock poisoned").is_some()
    }

    /// Digest of the stored dataset and undelivered results. Replay-cache
    /// contents and logs are excluded.
    pub fn state_digest(&self) -> Digest {
        let stored = self.dataset.read().expect("dataset lock poisoned").as_ref().map(|d| d.digest).unwrap_or_default();
        let outbox = self.outbox.lock().expect("outbox poisoned");
        let mut parcels: Vec<_> = outbox.iter().map(|(q, p)| (q.0, p.analyst, hash(&p.message))).collect();
        parcels.sort();
        let mut parts: Vec<&[u8]> = vec![&stored.0];
        for (q, a, m) in &parcels {
            parts.extend([&q[..], &a.0[..], &m.0[..]]);
        }
        hash_concat(&parts)
    }

    /// M1 → M3.
    pub fn handle_setup(&self, m1: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let result = self.setup_inner(m1);
        self.log(Some(MessageKind::M1), None, &result, "dataset stored");
        result
    }

    fn setup_inner(&self, m1: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let msg = self.verifier.verify_one(m1, MessageKind::M1, &[self.directory.curator.verification])?;
        let Payload::M1 { dataset: envelope } = msg.payload else { unreachable!("kind checked") };
        let mut slot = self.dataset.write().expect("dataset lock poisoned");
        if slot.is_some() {
            return Err(ServiceError::DuplicateSetup);
        }
        let bytes = pk_decrypt(&self.encryption, &envelope).map_err(|_| ServiceError::Decryption)?;
        let dataset = EncryptedDataset::from_bytes(&bytes)?;
        if let Some(dir) = &self.storage {
            write_atomic(dir, EDS_FILE, &bytes)?;
        }
        let digest = hash(&bytes);
        *slot = Some(Arc::new(StoredDataset { digest, dataset }));
        Ok(self.signer.sign_bytes(Payload::M3 { dataset_digest: digest })?)
    }

    /// M6 → reply for the MA: M8, or NoResults when nothing matched. The
    /// matching M7 is held for the analyst to fetch.
    pub fn handle_search(&self, m6: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let mut query = None;
        let result = self.search_inner(m6, &mut query);
        self.log(Some(MessageKind::M6), query, &result, "search answered");
        result
    }

    fn search_inner(&self, m6: &[u8], query_out: &mut Option<QueryId>) -> Result<Vec<u8>, ServiceError> {
        let msg = self.verifier.verify_one(m6, MessageKind::M6, &[self.directory.ma.verification])?;
        let Payload::M6 { query, analyst, values, variables, function } = msg.payload else {
            unreachable!("kind checked")
        };
        *query_out = Some(query);
        let stored = self.dataset.read().expect("dataset lock poisoned").clone().ok_or(ServiceError::NotReady)?;
        let mut outbox = self.outbox.lock().expect("outbox poisoned");
        if outbox.contains_key(&query) {
            return Err(ServiceError::ProtocolState(format!("query {query} already answered")));
        }
        let cells = stored.dataset.search(&values, &variables);
        if cells.is_empty() {
            return Ok(self.signer.sign_bytes(Payload::NoResults { query })?);
        }
        let result = ResultList(cells);
        let indices = result.indices();
        let m7 = self.signer.sign_bytes(Payload::M7 { query, result })?;
        let m8 = self.signer.sign_bytes(Payload::M8 { query, indices, function })?;
        outbox.insert(query, Parcel { analyst, message: m7 });
        Ok(m8)
    }

    /// Fetch → the held M7 for that query, if the requester is its analyst.
    pub fn handle_fetch(&self, fetch: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let mut query = None;
        let result = self.fetch_inner(fetch, &mut query);
        self.log(Some(MessageKind::Fetch), query, &result, "result delivered");
        result
    }

    fn fetch_inner(&self, fetch: &[u8], query_out: &mut Option<QueryId>) -> Result<Vec<u8>, ServiceError> {
        let msg = self.verifier.verify_one(fetch, MessageKind::Fetch, &self.directory.analyst_vks())?;
        let Payload::Fetch { query } = msg.payload else { unreachable!("kind checked") };
        *query_out = Some(query);
        let mut outbox = self.outbox.lock().expect("outbox poisoned");
        match outbox.get(&query) {
            Some(parcel) if parcel.analyst == msg.sender.fingerprint() => {
                Ok(outbox.remove(&query).expect("present").message)
            }
            _ => Err(ServiceError::ProtocolState(format!("no result held for query {query}"))),
        }
    }

    /// Dispatches one inbound frame and always produces a reply frame;
    /// failures become a signed refusal.
    pub fn respond(&self, frame: &[u8]) -> Vec<u8> {
        let result = match MessageKind::peek(frame) {
            Some(MessageKind::M1) => self.handle_setup(frame),
            Some(MessageKind::M6) => self.handle_search(frame),
            Some(MessageKind::Fetch) => self.handle_fetch(frame),
            _ => {
                let err = WireError::KindMismatch {
                    expected: vec![MessageKind::M1, MessageKind::M6, MessageKind::Fetch],
                    got: frame.first().copied().unwrap_or(0),
                };
                let err = ServiceError::from(err);
                self.events.note(self.signer.clock().now(), None, None, Some(&err), "");
                Err(err)
            }
        };
        result.unwrap_or_else(|e| refusal(&self.signer, frame, &e))
    }

    fn log<T>(&self, kind: Option<MessageKind>, query: Option<QueryId>, result: &Result<T, ServiceError>, ok: &str) {
        self.events.note(self.signer.clock().now(), kind, query, result.as_ref().err(), ok);
    }
}

/// A signed refusal answering `request`.
pub(crate) fn refusal(signer: &MessageSigner, request: &[u8], error: &ServiceError) -> Vec<u8> {
    let query = ProtocolMessage::decode(request).ok().and_then(|m| m.payload.query()).unwrap_or(QueryId::NONE);
    signer
        .sign_bytes(Payload::Refusal { query, class: error.class(), detail: error.to_string() })
        .expect("refusals always encode")
}

pub(crate) fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, dir.join(name))
}

fn load_dataset(dir: &Path) -> Result<Option<StoredDataset>, ServiceError> {
    let path = dir.join(EDS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(path)?;
    let dataset = EncryptedDataset::from_bytes(&bytes)?;
    Ok(Some(StoredDataset { digest: hash(&bytes), dataset }))
}
