//! Protocol messages and their canonical byte encoding.
//!
//! ```text
//! ┌──────────────────────── signed region ───────────────────────┐
//! ║ kind 1B ║ timestamp 8B LE ║ (len 4B LE ‖ field bytes) × N ║ sender vk 32B ║ signature 64B ║
//! ```
//!
//! The signature is Ed25519 over `H(signed region)`. Field counts and field
//! shapes are fixed per kind; decoding is strict, so every byte string has
//! at most one valid parse and re-encoding reproduces it exactly.

mod auth;
pub mod frame;

use std::collections::BTreeSet;
use std::fmt;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::{hash, hash_concat, Digest, Envelope, Signature, VerificationKey, DIGEST_LEN, KEY_LEN, SIGNATURE_LEN};
use crate::dataset::NumericCell;
use crate::mife::GroupElement;

pub use auth::{Clock, ManualClock, MessageSigner, ReplayCache, SystemClock, Verifier, DEFAULT_WINDOW};

pub const QUERY_ID_LEN: usize = 16;
pub const NONCE_LEN: usize = 16;
const HEADER_LEN: usize = 1 + 8;
const TRAILER_LEN: usize = KEY_LEN + SIGNATURE_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    /// Curator → CSP: encrypted dataset.
    M1 = 1,
    /// Curator → MA: encrypted salt and key lists.
    M2 = 2,
    /// CSP → Curator: dataset acknowledgement.
    M3 = 3,
    /// MA → Curator: lists acknowledgement.
    M4 = 4,
    /// Analyst → MA: search token.
    M5 = 5,
    /// MA → CSP: salted digests for the token's terms and the function.
    M6 = 6,
    /// CSP → Analyst: result list.
    M7 = 7,
    /// CSP → MA: key indices of the result and the function.
    M8 = 8,
    /// MA → Analyst: encrypted noisy functional key.
    M9 = 9,
    /// CSP → Analyst (relayed by MA): the search matched nothing.
    NoResults = 10,
    /// Any party: the request was refused, with an error class.
    Refusal = 11,
    /// Analyst → CSP: collect the result list of a query.
    Fetch = 12,
}

impl MessageKind {
    pub const ALL: [MessageKind; 12] = [
        Self::M1,
        Self::M2,
        Self::M3,
        Self::M4,
        Self::M5,
        Self::M6,
        Self::M7,
        Self::M8,
        Self::M9,
        Self::NoResults,
        Self::Refusal,
        Self::Fetch,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(usize::from(b).wrapping_sub(1)).copied()
    }

    pub fn as_byte(self) -> u8 {
        self as u8
    }

    /// Kind of an encoded message, without decoding the rest.
    pub fn peek(bytes: &[u8]) -> Option<Self> {
        bytes.first().copied().and_then(Self::from_byte)
    }
}

/// Milliseconds since the Unix epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn millis(self) -> u64 {
        self.0
    }
}

/// Correlates the two legs of one read; chosen by the MA.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryId(pub [u8; QUERY_ID_LEN]);

impl QueryId {
    pub const NONE: Self = Self([0; QUERY_ID_LEN]);

    pub fn random<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut id = [0u8; QUERY_ID_LEN];
        rng.fill_bytes(&mut id);
        Self(id)
    }
}

impl fmt::Debug for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QueryId({})", hex::encode(self.0))
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FunctionDescriptor {
    Sum,
    Avg,
}

impl FunctionDescriptor {
    fn as_byte(self) -> u8 {
        match self {
            Self::Sum => 1,
            Self::Avg => 2,
        }
    }

    fn from_field(field: &[u8]) -> Result<Self, WireError> {
        match field {
            [1] => Ok(Self::Sum),
            [2] => Ok(Self::Avg),
            [] => Err(WireError::Malformed("empty function descriptor")),
            _ => Err(WireError::Malformed("unknown function descriptor")),
        }
    }
}

impl fmt::Display for FunctionDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::Avg => "avg",
        })
    }
}

impl std::str::FromStr for FunctionDescriptor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sum" => Ok(Self::Sum),
            "avg" => Ok(Self::Avg),
            other => Err(format!("unknown function {other:?} (expected sum or avg)")),
        }
    }
}

/// `⟨H(w_i), H(w_j), f⟩` with unsalted term digests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SearchToken {
    pub value: Digest,
    pub variable: Digest,
    pub function: FunctionDescriptor,
}

impl SearchToken {
    /// Terms are hashed as raw, case-sensitive UTF-8.
    pub fn new(value_term: &str, variable_term: &str, function: FunctionDescriptor) -> Self {
        Self { value: hash(value_term.as_bytes()), variable: hash(variable_term.as_bytes()), function }
    }

    pub fn digest(&self) -> Digest {
        hash_concat(&[&self.value.0, &self.variable.0, &[self.function.as_byte()]])
    }
}

/// The result list `R`: matching numeric cells in row order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResultList(pub Vec<NumericCell>);

impl ResultList {
    pub fn indices(&self) -> IndexList {
        IndexList(self.0.iter().map(|c| c.key_index).collect())
    }
}

/// `L_index`: the key indices of a result list, same order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexList(pub Vec<Digest>);

/// Plaintext of the M9 envelope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyGrant {
    /// `sk_f' = Σ k_i + e`.
    pub key: GroupElement,
    pub epsilon: f64,
    pub sensitivity: f64,
    /// Number of result cells the key covers.
    pub cells: u32,
}

impl KeyGrant {
    pub const ENCODED_LEN: usize = 8 + 8 + 8 + 4;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENCODED_LEN);
        out.extend_from_slice(&self.key.to_le_bytes());
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.extend_from_slice(&self.sensitivity.to_le_bytes());
        out.extend_from_slice(&self.cells.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() != Self::ENCODED_LEN {
            return Err(WireError::Malformed("key grant"));
        }
        let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("length checked") };
        Ok(Self {
            key: GroupElement::from_le_bytes(word(0)),
            epsilon: f64::from_le_bytes(word(8)),
            sensitivity: f64::from_le_bytes(word(16)),
            cells: u32::from_le_bytes(bytes[24..28].try_into().expect("length checked")),
        })
    }
}

/// Why a message or request was rejected. Carried in refusals and logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorClass {
    Malformed = 1,
    KindMismatch = 2,
    UnknownSender = 3,
    BadSignature = 4,
    StaleTimestamp = 5,
    ReplayDetected = 6,
    DecryptionFailed = 7,
    DuplicateSetup = 8,
    NotReady = 9,
    BudgetExhausted = 10,
    UnknownKeyIndex = 11,
    ProtocolState = 12,
    InvalidData = 13,
    Unavailable = 14,
}

impl ErrorClass {
    const ALL: [ErrorClass; 14] = [
        Self::Malformed,
        Self::KindMismatch,
        Self::UnknownSender,
        Self::BadSignature,
        Self::StaleTimestamp,
        Self::ReplayDetected,
        Self::DecryptionFailed,
        Self::DuplicateSetup,
        Self::NotReady,
        Self::BudgetExhausted,
        Self::UnknownKeyIndex,
        Self::ProtocolState,
        Self::InvalidData,
        Self::Unavailable,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(usize::from(b).wrapping_sub(1)).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Malformed => "malformed",
            Self::KindMismatch => "kind-mismatch",
            Self::UnknownSender => "unknown-sender",
            Self::BadSignature => "bad-signature",
            Self::StaleTimestamp => "stale-timestamp",
            Self::ReplayDetected => "replay-detected",
            Self::DecryptionFailed => "decryption-failed",
            Self::DuplicateSetup => "duplicate-setup",
            Self::NotReady => "not-ready",
            Self::BudgetExhausted => "budget-exhausted",
            Self::UnknownKeyIndex => "unknown-key-index",
            Self::ProtocolState => "protocol-state",
            Self::InvalidData => "invalid-data",
            Self::Unavailable => "unavailable",
        }
    }

    /// Verification failures that indicate active interference on the wire.
    pub fn is_verification_failure(self) -> bool {
        matches!(
            self,
            Self::Malformed
                | Self::KindMismatch
                | Self::UnknownSender
                | Self::BadSignature
                | Self::StaleTimestamp
                | Self::ReplayDetected
        )
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    M1 { dataset: Envelope },
    M2 { lists: Envelope },
    M3 { dataset_digest: Digest },
    M4 { lists_digest: Digest },
    M5 { token: SearchToken, nonce: [u8; NONCE_LEN] },
    M6 {
        query: QueryId,
        analyst: Digest,
        values: BTreeSet<Digest>,
        variables: BTreeSet<Digest>,
        function: FunctionDescriptor,
    },
    M7 { query: QueryId, result: ResultList },
    M8 { query: QueryId, indices: IndexList, function: FunctionDescriptor },
    M9 { query: QueryId, key: Envelope },
    NoResults { query: QueryId },
    Refusal { query: QueryId, class: ErrorClass, detail: String },
    Fetch { query: QueryId },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::M1 { .. } => MessageKind::M1,
            Payload::M2 { .. } => MessageKind::M2,
            Payload::M3 { .. } => MessageKind::M3,
            Payload::M4 { .. } => MessageKind::M4,
            Payload::M5 { .. } => MessageKind::M5,
            Payload::M6 { .. } => MessageKind::M6,
            Payload::M7 { .. } => MessageKind::M7,
            Payload::M8 { .. } => MessageKind::M8,
            Payload::M9 { .. } => MessageKind::M9,
            Payload::NoResults { .. } => MessageKind::NoResults,
            Payload::Refusal { .. } => MessageKind::Refusal,
            Payload::Fetch { .. } => MessageKind::Fetch,
        }
    }

    /// Query this payload belongs to, if any.
    pub fn query(&self) -> Option<QueryId> {
        match self {
            Payload::M6 { query, .. }
            | Payload::M7 { query, .. }
            | Payload::M8 { query, .. }
            | Payload::M9 { query, .. }
            | Payload::NoResults { query }
            | Payload::Refusal { query, .. }
            | Payload::Fetch { query } => Some(*query),
            _ => None,
        }
    }

    fn fields(&self) -> Result<Vec<Vec<u8>>, WireError> {
        fn digests<'a>(items: impl IntoIterator<Item = &'a Digest>) -> Vec<u8> {
            items.into_iter().flat_map(|d| d.0).collect()
        }
        Ok(match self {
            Payload::M1 { dataset: env } | Payload::M2 { lists: env } => vec![env.to_bytes()],
            Payload::M3 { dataset_digest: d } | Payload::M4 { lists_digest: d } => vec![d.0.to_vec()],
            Payload::M5 { token, nonce } => vec![
                token.value.0.to_vec(),
                token.variable.0.to_vec(),
                vec![token.function.as_byte()],
                nonce.to_vec(),
            ],
            Payload::M6 { query, analyst, values, variables, function } => vec![
                query.0.to_vec(),
                analyst.0.to_vec(),
                digests(values),
                digests(variables),
                vec![function.as_byte()],
            ],
            Payload::M7 { query, result } => {
                if result.0.is_empty() {
                    return Err(WireError::Encoding("result list must not be empty"));
                }
                vec![query.0.to_vec(), result.0.iter().flat_map(|c| c.to_bytes()).collect()]
            }
            Payload::M8 { query, indices, function } => {
                if indices.0.is_empty() {
                    return Err(WireError::Encoding("index list must not be empty"));
                }
                vec![query.0.to_vec(), digests(&indices.0), vec![function.as_byte()]]
            }
            Payload::M9 { query, key } => vec![query.0.to_vec(), key.to_bytes()],
            Payload::NoResults { query } | Payload::Fetch { query } => vec![query.0.to_vec()],
            Payload::Refusal { query, class, detail } => {
                vec![query.0.to_vec(), vec![*class as u8], detail.as_bytes().to_vec()]
            }
        })
    }

    fn from_fields(kind: MessageKind, fields: &[&[u8]]) -> Result<Self, WireError> {
        fn digest(f: &[u8]) -> Result<Digest, WireError> {
            Digest::from_slice(f).ok_or(WireError::Malformed("digest field"))
        }
        fn query(f: &[u8]) -> Result<QueryId, WireError> {
            f.try_into().map(QueryId).map_err(|_| WireError::Malformed("query id field"))
        }
        fn digest_list(f: &[u8]) -> Result<Vec<Digest>, WireError> {
            if !f.len().is_multiple_of(DIGEST_LEN) {
                return Err(WireError::Malformed("digest list field"));
            }
            Ok(f.chunks_exact(DIGEST_LEN).map(|c| Digest::from_slice(c).expect("chunk length")).collect())
        }
        fn digest_set(f: &[u8]) -> Result<BTreeSet<Digest>, WireError> {
            let list = digest_list(f)?;
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(WireError::Malformed("digest set not strictly ascending"));
            }
            Ok(list.into_iter().collect())
        }
        fn envelope(f: &[u8]) -> Result<Envelope, WireError> {
            Envelope::from_bytes(f).map_err(|_| WireError::Malformed("envelope field"))
        }
        let expect = |n: usize| {
            if fields.len() == n {
                Ok(())
            } else {
                Err(WireError::Malformed("wrong field count"))
            }
        };
        Ok(match kind {
            MessageKind::M1 => {
                expect(1)?;
                Payload::M1 { dataset: envelope(fields[0])? }
            }
            MessageKind::M2 => {
                expect(1)?;
                Payload::M2 { lists: envelope(fields[0])? }
            }
            MessageKind::M3 => {
                expect(1)?;
                Payload::M3 { dataset_digest: digest(fields[0])? }
            }
            MessageKind::M4 => {
                expect(1)?;
                Payload::M4 { lists_digest: digest(fields[0])? }
            }
            MessageKind::M5 => {
                expect(4)?;
                Payload::M5 {
                    token: SearchToken {
                        value: digest(fields[0])?,
                        variable: digest(fields[1])?,
                        function: FunctionDescriptor::from_field(fields[2])?,
                    },
                    nonce: fields[3].try_into().map_err(|_| WireError::Malformed("nonce field"))?,
                }
            }
            MessageKind::M6 => {
                expect(5)?;
                Payload::M6 {
                    query: query(fields[0])?,
                    analyst: digest(fields[1])?,
                    values: digest_set(fields[2])?,
                    variables: digest_set(fields[3])?,
                    function: FunctionDescriptor::from_field(fields[4])?,
                }
            }
            MessageKind::M7 => {
                expect(2)?;
                let cells = fields[1];
                if cells.is_empty() || !cells.len().is_multiple_of(NumericCell::ENCODED_LEN) {
                    return Err(WireError::Malformed("result list field"));
                }
                let cells = cells
                    .chunks_exact(NumericCell::ENCODED_LEN)
                    .map(|c| NumericCell::from_bytes(c).expect("chunk length"))
                    .collect();
                Payload::M7 { query: query(fields[0])?, result: ResultList(cells) }
            }
            MessageKind::M8 => {
                expect(3)?;
                let indices = digest_list(fields[1])?;
                if indices.is_empty() {
                    return Err(WireError::Malformed("empty index list"));
                }
                Payload::M8 {
                    query: query(fields[0])?,
                    indices: IndexList(indices),
                    function: FunctionDescriptor::from_field(fields[2])?,
                }
            }
            MessageKind::M9 => {
                expect(2)?;
                Payload::M9 { query: query(fields[0])?, key: envelope(fields[1])? }
            }
            MessageKind::NoResults => {
                expect(1)?;
                Payload::NoResults { query: query(fields[0])? }
            }
            MessageKind::Fetch => {
                expect(1)?;
                Payload::Fetch { query: query(fields[0])? }
            }
            MessageKind::Refusal => {
                expect(3)?;
                let class = match fields[1] {
                    [b] => ErrorClass::from_byte(*b).ok_or(WireError::Malformed("error class"))?,
                    _ => return Err(WireError::Malformed("error class")),
                };
                let detail = std::str::from_utf8(fields[2]).map_err(|_| WireError::Malformed("refusal detail"))?;
                Payload::Refusal { query: query(fields[0])?, class, detail: detail.to_owned() }
            }
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error("cannot encode message: {0}")]
    Encoding(&'static str),
    #[error("expected one of {expected:?}, got kind byte {got}")]
    KindMismatch { expected: Vec<MessageKind>, got: u8 },
    #[error("sender is not trusted for this message")]
    UnknownSender,
    #[error("signature does not verify")]
    BadSignature,
    #[error("timestamp {timestamp} ms is outside the freshness window around {now} ms")]
    StaleTimestamp { timestamp: u64, now: u64 },
    #[error("message was already accepted once")]
    ReplayDetected,
}

impl WireError {
    pub fn class(&self) -> ErrorClass {
        match self {
            WireError::Malformed(_) | WireError::Encoding(_) => ErrorClass::Malformed,
            WireError::KindMismatch { .. } => ErrorClass::KindMismatch,
            WireError::UnknownSender => ErrorClass::UnknownSender,
            WireError::BadSignature => ErrorClass::BadSignature,
            WireError::StaleTimestamp { .. } => ErrorClass::StaleTimestamp,
            WireError::ReplayDetected => ErrorClass::ReplayDetected,
        }
    }
}

/// `kind ‖ timestamp ‖ (len ‖ field)*`: the bytes covered by the signature.
pub fn canonical_encode(timestamp: Timestamp, payload: &Payload) -> Result<Vec<u8>, WireError> {
    let fields = payload.fields()?;
    let mut out = Vec::with_capacity(HEADER_LEN + fields.iter().map(|f| 4 + f.len()).sum::<usize>());
    out.push(payload.kind().as_byte());
    out.extend_from_slice(&timestamp.0.to_le_bytes());
    for field in &fields {
        let len = u32::try_from(field.len()).map_err(|_| WireError::Encoding("field too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(field);
    }
    Ok(out)
}

pub fn canonical_decode(bytes: &[u8]) -> Result<(Timestamp, Payload), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Malformed("truncated header"));
    }
    let kind = MessageKind::from_byte(bytes[0]).ok_or(WireError::Malformed("unknown kind"))?;
    let timestamp = Timestamp(u64::from_le_bytes(bytes[1..HEADER_LEN].try_into().expect("length checked")));
    let mut rest = &bytes[HEADER_LEN..];
    let mut fields = Vec::new();
    while !rest.is_empty() {
        let (len, tail) = rest.split_first_chunk::<4>().ok_or(WireError::Malformed("truncated field length"))?;
        let len = u32::from_le_bytes(*len) as usize;
        if tail.len() < len {
            return Err(WireError::Malformed("truncated field"));
        }
        fields.push(&tail[..len]);
        rest = &tail[len..];
    }
    Ok((timestamp, Payload::from_fields(kind, &fields)?))
}

/// A signed message as it travels on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub timestamp: Timestamp,
    pub payload: Payload,
    pub sender: VerificationKey,
    pub signature: Signature,
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn signed_bytes(&self) -> Result<Vec<u8>, WireError> {
        canonical_encode(self.timestamp, &self.payload)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WireError> {
        let mut out = self.signed_bytes()?;
        out.extend_from_slice(&self.sender.0);
        out.extend_from_slice(&self.signature.0);
        Ok(out)
    }

    /// Parses without checking signature or freshness.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER_LEN + TRAILER_LEN {
            return Err(WireError::Malformed("truncated message"));
        }
        let (signed, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
        let (timestamp, payload) = canonical_decode(signed)?;
        Ok(Self {
            timestamp,
            payload,
            sender: VerificationKey(trailer[..KEY_LEN].try_into().expect("length checked")),
            signature: Signature(trailer[KEY_LEN..].try_into().expect("length checked")),
        })
    }

    /// Byte range of the `index`-th payload field's contents within the
    /// encoded message (after its length prefix).
    pub fn field_span(bytes: &[u8], index: usize) -> Option<std::ops::Range<usize>> {
        let mut at = HEADER_LEN;
        let end = bytes.len().checked_sub(TRAILER_LEN)?;
        for i in 0.. {
            let len = u32::from_le_bytes(bytes.get(at..at + 4)?.try_into().ok()?) as usize;
            let start = at + 4;
            if start + len > end {
                return None;
            }
            if i == index {
                return Some(start..start + len);
            }
            at = start + len;
        }
        None
    }
}
