//! Signing, verification, freshness and replay detection.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use super::{canonical_encode, MessageKind, Payload, ProtocolMessage, Timestamp, WireError};
use crate::crypto::{hash, verify, Signature, SigningKeyPair, VerificationKey};

/// Default freshness window `W`.
pub const DEFAULT_WINDOW: Duration = Duration::from_secs(30);

pub trait Clock: Send + Sync + fmt::Debug {
    fn now(&self) -> Timestamp;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let since = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Timestamp(since.as_millis() as u64)
    }
}

/// A clock that only moves when told to. Shared between parties in tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self(AtomicU64::new(start.0))
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t.0, Ordering::SeqCst);
    }

    pub fn advance(&self, by: Duration) {
        self.0.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

/// Signs outgoing payloads with monotone nondecreasing timestamps.
pub struct MessageSigner {
    keys: SigningKeyPair,
    clock: Arc<dyn Clock>,
    last: AtomicU64,
}

impl fmt::Debug for MessageSigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MessageSigner").field("vk", &self.keys.verification_key()).finish_non_exhaustive()
    }
}

impl MessageSigner {
    pub fn new(keys: SigningKeyPair, clock: Arc<dyn Clock>) -> Self {
        Self { keys, clock, last: AtomicU64::new(0) }
    }

    pub fn verification_key(&self) -> VerificationKey {
        self.keys.verification_key()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn sign(&self, payload: Payload) -> Result<ProtocolMessage, WireError> {
        let now = self.clock.now().0;
        let ts = self.last.fetch_max(now, Ordering::SeqCst).max(now);
        self.sign_at(Timestamp(ts), payload)
    }

    /// Signs with an explicit timestamp; for tests and replay simulation.
    pub fn sign_at(&self, timestamp: Timestamp, payload: Payload) -> Result<ProtocolMessage, WireError> {
        let canonical = canonical_encode(timestamp, &payload)?;
        let signature = self.keys.sign(hash(&canonical).as_bytes());
        Ok(ProtocolMessage { timestamp, payload, sender: self.keys.verification_key(), signature })
    }

    pub fn sign_bytes(&self, payload: Payload) -> Result<Vec<u8>, WireError> {
        self.sign(payload)?.to_bytes()
    }
}

#[derive(Debug, Default)]
struct SeenSet {
    members: HashMap<(VerificationKey, Signature), u64>,
    order: VecDeque<(u64, (VerificationKey, Signature))>,
}

/// Accepted `(sender, signature)` pairs, retained for twice the window.
#[derive(Debug)]
pub struct ReplayCache {
    retention_ms: u64,
    inner: Mutex<SeenSet>,
}

impl ReplayCache {
    pub fn new(window: Duration) -> Self {
        Self { retention_ms: 2 * window.as_millis() as u64, inner: Mutex::new(SeenSet::default()) }
    }

    /// Records the pair; `false` if it was already present.
    pub fn insert(&self, sender: VerificationKey, signature: Signature, now: Timestamp) -> bool {
        let mut seen = self.inner.lock().expect("replay cache poisoned");
        while let Some(&(expiry, key)) = seen.order.front() {
            if expiry > now.0 {
                break;
            }
            seen.order.pop_front();
            if seen.members.get(&key) == Some(&expiry) {
                seen.members.remove(&key);
            }
        }
        let key = (sender, signature);
        if seen.members.contains_key(&key) {
            return false;
        }
        let expiry = now.0.saturating_add(self.retention_ms);
        seen.members.insert(key, expiry);
        seen.order.push_back((expiry, key));
        true
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("replay cache poisoned").members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Receiving side of the wire: all checks a party runs before acting on
/// a message.
#[derive(Debug)]
pub struct Verifier {
    window_ms: u64,
    clock: Arc<dyn Clock>,
    cache: ReplayCache,
}

impl Verifier {
    pub fn new(window: Duration, clock: Arc<dyn Clock>) -> Self {
        Self { window_ms: window.as_millis() as u64, clock, cache: ReplayCache::new(window) }
    }

    pub fn window(&self) -> Duration {
        Duration::from_millis(self.window_ms)
    }

    /// Checks run in order: kind, parse, sender, signature, freshness,
    /// replay. The replay cache only records messages that pass every
    /// other check.
    pub fn verify(
        &self,
        bytes: &[u8],
        expected: &[MessageKind],
        trusted: &[VerificationKey],
    ) -> Result<ProtocolMessage, WireError> {
        match MessageKind::peek(bytes) {
            Some(kind) if expected.contains(&kind) => {}
            _ => {
                return Err(WireError::KindMismatch {
                    expected: expected.to_vec(),
                    got: bytes.first().copied().unwrap_or(0),
                })
            }
        }
        let msg = ProtocolMessage::decode(bytes)?;
        if !trusted.contains(&msg.sender) {
            return Err(WireError::UnknownSender);
        }
        let canonical = &bytes[..bytes.len() - super::TRAILER_LEN];
        if !verify(&msg.sender, hash(canonical).as_bytes(), &msg.signature) {
            return Err(WireError::BadSignature);
        }
        let now = self.clock.now();
        if now.0.abs_diff(msg.timestamp.0) > self.window_ms {
            return Err(WireError::StaleTimestamp { timestamp: msg.timestamp.0, now: now.0 });
        }
        if !self.cache.insert(msg.sender, msg.signature, now) {
            return Err(WireError::ReplayDetected);
        }
        Ok(msg)
    }

    pub fn verify_one(
        &self,
        bytes: &[u8],
        expected: MessageKind,
        trusted: &[VerificationKey],
    ) -> Result<ProtocolMessage, WireError> {
        self.verify(bytes, &[expected], trusted)
    }
}
