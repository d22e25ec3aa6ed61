//! Mediating authority: holds salt and key maps, meters privacy budgets and
//! issues noisy functional keys.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use psfe_core::budget::{BudgetAccount, BudgetCap, BudgetLedger};
use psfe_core::crypto::{
    hash, pk_decrypt, pk_encrypt, Digest, EncryptionKeyPair, PartyKeys, PublicIdentity,
};
use psfe_core::dataset::{keys_for_indices, lookup_salted, MaLists};
use psfe_core::mife::GroupElement;
use psfe_core::noise::{sample_noise, NoiseSample, PrivacyParams};
use psfe_core::wire::{
    KeyGrant, MessageKind, MessageSigner, Payload, ProtocolMessage, QueryId, SearchToken, Verifier, WireError,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::csp::{refusal, write_atomic};
use crate::error::ServiceError;
use crate::events::EventLog;
use crate::identity::Directory;
use crate::ServiceOptions;

pub const LISTS_FILE: &str = "lists.psfe";
pub const JOURNAL_FILE: &str = "budget.journal";

/// How the MA perturbs functional keys.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseMode {
    /// Rounded Laplace noise with scale `Δq/ε`.
    Laplace,
    /// A fixed offset, for tests that need exact answers.
    Fixed(i64),
}

#[derive(Clone, Debug)]
pub struct MaPolicy {
    pub epsilon: f64,
    pub budget: BudgetCap,
    pub noise: NoiseMode,
    /// Seed for noise and envelope randomness; fresh entropy when absent.
    pub seed: Option<u64>,
}

impl Default for MaPolicy {
    fn default() -> Self {
        Self { epsilon: 1.0, budget: BudgetCap::Unlimited, noise: NoiseMode::Laplace, seed: None }
    }
}

#[derive(Debug)]
struct StoredLists {
    digest: Digest,
    lists: MaLists,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendingQuery {
    pub token: SearchToken,
    pub analyst: PublicIdentity,
    pub epsilon: f64,
}

/// What to do with an inbound frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaStep {
    /// Send `m6` to the CSP and pass its reply to [`MaService::relay`].
    Forward { query: QueryId, m6: Vec<u8> },
    /// Answer the sender directly.
    Reply(Vec<u8>),
}

#[derive(Debug)]
pub struct MaService {
    signer: MessageSigner,
    encryption: EncryptionKeyPair,
    verifier: Verifier,
    directory: Directory,
    storage: Option<PathBuf>,
    lists: RwLock<Option<Arc<StoredLists>>>,
    budget: BudgetLedger,
    policy: MaPolicy,
    rng: Mutex<StdRng>,
    pending: Mutex<HashMap<QueryId, PendingQuery>>,
    events: EventLog,
}

impl MaService {
    /// Creates the service, reloading stored lists and replaying the budget
    /// journal if the storage directory holds them.
    pub fn new(
        keys: PartyKeys,
        directory: Directory,
        options: ServiceOptions,
        policy: MaPolicy,
    ) -> Result<Self, ServiceError> {
        PrivacyParams::new(policy.epsilon, 1.0).map_err(|e| ServiceError::InvalidData(e.to_string()))?;
        let budget = BudgetLedger::new(policy.budget);
        let lists = match &options.storage {
            Some(dir) => {
                replay_journal(dir, &budget)?;
                load_lists(dir)?
            }
            None => None,
        };
        let rng = match policy.seed {
            Some(seed) => StdRng::seed_from_u64(seed),
            None => StdRng::from_entropy(),
        };
        Ok(Self {
            signer: MessageSigner::new(keys.signing, options.clock.clone()),
            encryption: keys.encryption,
            verifier: Verifier::new(options.window, options.clock),
            directory,
            storage: options.storage,
            lists: RwLock::new(lists.map(Arc::new)),
            budget,
            policy,
            rng: Mutex::new(rng),
            pending: Mutex::new(HashMap::new()),
            events: EventLog::new("ma"),
        })
    }

    pub fn public(&self) -> PublicIdentity {
        PublicIdentity { verification: self.signer.verification_key(), encryption: self.encryption.public_key() }
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn budget(&self) -> Vec<BudgetAccount> {
        self.budget.snapshot()
    }

    pub fn has_lists(&self) -> bool {
        self.lists.read().expect("lists lock poisoned").is_some()
    }

    pub fn pending(&self) -> Vec<(QueryId, PendingQuery)> {
        let mut out: Vec<_> =
            self.pending.lock().expect("pending poisoned").iter().map(|(q, p)| (*q, p.clone())).collect();
        out.sort_by_key(|(q, _)| *q);
        out
    }

    /// Digest of lists, budget accounts and pending queries. Replay-cache
    /// contents and logs are excluded.
    pub fn state_digest(&self) -> Digest {
        let lists = self.lists.read().expect("lists lock poisoned").as_ref().map(|l| l.digest).unwrap_or_default();
        let mut buf = lists.0.to_vec();
        for account in self.budget.snapshot() {
            buf.extend_from_slice(&account.analyst().0);
            buf.extend_from_slice(&account.spent().to_le_bytes());
        }
        for (query, p) in self.pending() {
            buf.extend_from_slice(&query.0);
            buf.extend_from_slice(&p.token.digest().0);
            buf.extend_from_slice(&p.analyst.verification.0);
        }
        hash(&buf)
    }

    /// M2 → M4.
    pub fn handle_setup(&self, m2: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let result = self.setup_inner(m2);
        self.log(Some(MessageKind::M2), None, &result, "lists stored");
        result
    }

    fn setup_inner(&self, m2: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let msg = self.verifier.verify_one(m2, MessageKind::M2, &[self.directory.curator.verification])?;
        let Payload::M2 { lists: envelope } = msg.payload else { unreachable!("kind checked") };
        let mut slot = self.lists.write().expect("lists lock poisoned");
        if slot.is_some() {
            return Err(ServiceError::DuplicateSetup);
        }
        let bytes = pk_decrypt(&self.encryption, &envelope).map_err(|_| ServiceError::Decryption)?;
        let lists = MaLists::from_bytes(&bytes)?;
        if let Some(dir) = &self.storage {
            write_atomic(dir, LISTS_FILE, &bytes)?;
        }
        let digest = hash(&bytes);
        *slot = Some(Arc::new(StoredLists { digest, lists }));
        Ok(self.signer.sign_bytes(Payload::M4 { lists_digest: digest })?)
    }

    /// M5 → (query id, M6 for the CSP). Charges the analyst's budget.
    pub fn handle_token(&self, m5: &[u8]) -> Result<(QueryId, Vec<u8>), ServiceError> {
        let mut query = None;
        let result = self.token_inner(m5, &mut query);
        self.log(Some(MessageKind::M5), query, &result, "token resolved");
        result
    }

    fn token_inner(&self, m5: &[u8], query_out: &mut Option<QueryId>) -> Result<(QueryId, Vec<u8>), ServiceError> {
        let msg = self.verifier.verify_one(m5, MessageKind::M5, &self.directory.analyst_vks())?;
        let Payload::M5 { token, .. } = msg.payload else { unreachable!("kind checked") };
        let analyst = self.analyst(&msg)?;
        let stored = self.lists.read().expect("lists lock poisoned").clone().ok_or(ServiceError::NotReady)?;
        self.budget.charge(analyst.verification.fingerprint(), self.policy.epsilon)?;
        self.journal(&analyst)?;

        let values = lookup_salted(&stored.lists.salts, &token.value);
        let variables = lookup_salted(&stored.lists.salts, &token.variable);
        let query = QueryId::random(&mut *self.rng.lock().expect("rng poisoned"));
        *query_out = Some(query);
        let m6 = self.signer.sign_bytes(Payload::M6 {
            query,
            analyst: analyst.verification.fingerprint(),
            values,
            variables,
            function: token.function,
        })?;
        let pending = PendingQuery { token, analyst, epsilon: self.policy.epsilon };
        self.pending.lock().expect("pending poisoned").insert(query, pending);
        Ok((query, m6))
    }

    /// The CSP's reply to the M6 of `query` → bytes for the analyst: M9, or
    /// the CSP's own NoResults or refusal passed through unchanged.
    ///
    /// A reply that fails verification leaves the pending query in place;
    /// the caller decides whether to [`abort`](Self::abort) it.
    pub fn handle_csp_reply(&self, query: QueryId, reply: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let kind = MessageKind::peek(reply);
        let result = self.reply_inner(query, reply);
        let ok = match kind {
            Some(MessageKind::M8) => "functional key issued",
            _ => "csp answer relayed",
        };
        self.log(kind, Some(query), &result, ok);
        result
    }

    fn reply_inner(&self, query: QueryId, reply: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let msg = self.verifier.verify(
            reply,
            &[MessageKind::M8, MessageKind::NoResults, MessageKind::Refusal],
            &[self.directory.csp.verification],
        )?;
        if msg.payload.query() != Some(query) {
            return Err(ServiceError::ProtocolState(format!("reply does not belong to query {query}")));
        }
        let pending = self
            .pending
            .lock()
            .expect("pending poisoned")
            .get(&query)
            .cloned()
            .ok_or_else(|| ServiceError::ProtocolState(format!("query {query} is not pending")))?;
        let Payload::M8 { indices, function, .. } = msg.payload else {
            self.abort(query);
            return Ok(reply.to_vec());
        };
        let issued = self.issue_key(query, &pending, &indices.0, function);
        self.abort(query);
        issued
    }

    fn issue_key(
        &self,
        query: QueryId,
        pending: &PendingQuery,
        indices: &[Digest],
        function: psfe_core::wire::FunctionDescriptor,
    ) -> Result<Vec<u8>, ServiceError> {
        if function != pending.token.function {
            return Err(ServiceError::ProtocolState(format!("function {function} differs from the token's")));
        }
        let stored = self.lists.read().expect("lists lock poisoned").clone().ok_or(ServiceError::NotReady)?;
        let keys = keys_for_indices(&stored.lists.keys, indices)?;
        let range = stored
            .lists
            .ranges
            .get(&pending.token.variable)
            .ok_or_else(|| ServiceError::InvalidData("queried variable has no declared range".into()))?;
        let params = PrivacyParams::new(pending.epsilon, range.width() as f64)
            .map_err(|e| ServiceError::InvalidData(e.to_string()))?;
        let mut rng = self.rng.lock().expect("rng poisoned");
        let noise = match self.policy.noise {
            NoiseMode::Laplace => sample_noise(&params, &mut *rng),
            NoiseMode::Fixed(v) => NoiseSample::fixed(v),
        };
        let key: GroupElement = keys.into_iter().sum::<GroupElement>() + GroupElement::from_signed(noise.value());
        let grant = KeyGrant {
            key,
            epsilon: params.epsilon(),
            sensitivity: params.sensitivity(),
            cells: u32::try_from(indices.len()).map_err(|_| ServiceError::InvalidData("index list too long".into()))?,
        };
        let envelope = pk_encrypt(&pending.analyst.encryption, &grant.to_bytes(), &mut *rng);
        Ok(self.signer.sign_bytes(Payload::M9 { query, key: envelope })?)
    }

    /// Drops a pending query.
    pub fn abort(&self, query: QueryId) {
        self.pending.lock().expect("pending poisoned").remove(&query);
    }

    /// Dispatches a frame from the curator or an analyst.
    pub fn respond(&self, frame: &[u8]) -> MaStep {
        let result = match MessageKind::peek(frame) {
            Some(MessageKind::M2) => self.handle_setup(frame).map(MaStep::Reply),
            Some(MessageKind::M5) => self.handle_token(frame).map(|(query, m6)| MaStep::Forward { query, m6 }),
            _ => {
                let err = ServiceError::from(WireError::KindMismatch {
                    expected: vec![MessageKind::M2, MessageKind::M5],
                    got: frame.first().copied().unwrap_or(0),
                });
                self.events.note(self.signer.clock().now(), None, None, Some(&err), "");
                Err(err)
            }
        };
        result.unwrap_or_else(|e| MaStep::Reply(refusal(&self.signer, frame, &e)))
    }

    /// Turns the outcome of forwarding `query` into the analyst's answer,
    /// aborting the query on any failure.
    pub fn relay(&self, query: QueryId, reply: Result<Vec<u8>, ServiceError>) -> Vec<u8> {
        let result = reply.and_then(|bytes| self.handle_csp_reply(query, &bytes));
        match result {
            Ok(bytes) => bytes,
            Err(e) => {
                self.abort(query);
                self.signer
                    .sign_bytes(Payload::Refusal { query, class: e.class(), detail: e.to_string() })
                    .expect("refusals always encode")
            }
        }
    }

    fn analyst(&self, msg: &ProtocolMessage) -> Result<PublicIdentity, ServiceError> {
        self.directory
            .analysts
            .iter()
            .find(|a| a.verification == msg.sender)
            .copied()
            .ok_or(ServiceError::Wire(WireError::UnknownSender))
    }

    fn journal(&self, analyst: &PublicIdentity) -> Result<(), ServiceError> {
        let Some(dir) = &self.storage else { return Ok(()) };
        fs::create_dir_all(dir)?;
        let mut file = OpenOptions::new().create(true).append(true).open(dir.join(JOURNAL_FILE))?;
        writeln!(file, "{} {}", analyst.verification.fingerprint().to_hex(), self.policy.epsilon)?;
        Ok(())
    }

    fn log<T>(&self, kind: Option<MessageKind>, query: Option<QueryId>, result: &Result<T, ServiceError>, ok: &str) {
        self.events.note(self.signer.clock().now(), kind, query, result.as_ref().err(), ok);
    }
}

fn load_lists(dir: &Path) -> Result<Option<StoredLists>, ServiceError> {
    let path = dir.join(LISTS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(path)?;
    let lists = MaLists::from_bytes(&bytes)?;
    Ok(Some(StoredLists { digest: hash(&bytes), lists }))
}

/// Each journal line is `<analyst fingerprint hex> <epsilon>`.
fn replay_journal(dir: &Path, budget: &BudgetLedger) -> Result<(), ServiceError> {
    let path = dir.join(JOURNAL_FILE);
    if !path.exists() {
        return Ok(());
    }
    for (n, line) in fs::read_to_string(&path)?.lines().enumerate() {
        let bad = || ServiceError::InvalidData(format!("{}:{}: bad journal line", path.display(), n + 1));
        let (who, eps) = line.split_once(' ').ok_or_else(bad)?;
        let who = hex::decode(who).ok().and_then(|b| Digest::from_slice(&b)).ok_or_else(bad)?;
        let eps: f64 = eps.parse().map_err(|_| bad())?;
        if !(eps.is_finite() && eps > 0.0) {
            return Err(bad());
        }
        budget.restore(who, eps);
    }
    Ok(())
}
