//! A Dolev-Yao adversary on the wire: it relays length-prefixed frames
//! between two endpoints, records what it sees and, once armed, rewrites
//! the frames its strategy targets.

use std::collections::HashMap;
use std::fmt;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use psfe_core::crypto::DIGEST_LEN;
use psfe_core::wire::{MessageKind, ProtocolMessage};
use psfe_node::net::{read_frame, write_frame};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use tokio::io::AsyncWriteExt;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

/// Field positions inside M7, M8 and M9 payloads.
const RESULT_FIELD: usize = 1;
const INDEX_FIELD: usize = 1;
const FUNCTION_FIELD: usize = 2;
const KEY_FIELD: usize = 1;
/// Bytes of the masked value at the start of each encoded result cell.
const MASKED_LEN: usize = 8;
const CELL_LEN: usize = MASKED_LEN + DIGEST_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Passthrough,
    /// Swap the next frame of this kind for one captured earlier.
    Replay(MessageKind),
    /// Flip a byte of one masked value in M7.
    SubstituteResult,
    /// Replace one key index digest in M8.
    TamperIndices,
    /// Swap the function descriptor in M8.
    TamperFunction,
    /// Flip a byte of the key envelope in M9.
    TamperKey,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Passthrough,
        Strategy::Replay(MessageKind::M7),
        Strategy::SubstituteResult,
        Strategy::TamperKey,
        Strategy::TamperIndices,
        Strategy::TamperFunction,
        Strategy::Replay(MessageKind::M9),
    ];

    /// The message kind this strategy rewrites.
    pub fn target(self) -> Option<MessageKind> {
        match self {
            Strategy::Passthrough => None,
            Strategy::Replay(kind) => Some(kind),
            Strategy::SubstituteResult => Some(MessageKind::M7),
            Strategy::TamperIndices | Strategy::TamperFunction => Some(MessageKind::M8),
            Strategy::TamperKey => Some(MessageKind::M9),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Passthrough => f.write_str("passthrough"),
            Strategy::Replay(kind) => write!(f, "replay-{}", format!("{kind:?}").to_lowercase()),
            Strategy::SubstituteResult => f.write_str("substitute-result"),
            Strategy::TamperIndices => f.write_str("tamper-indices"),
            Strategy::TamperFunction => f.write_str("tamper-function"),
            Strategy::TamperKey => f.write_str("tamper-key"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(kind) = s.strip_prefix("replay-") {
            return MessageKind::ALL
                .into_iter()
                .find(|k| format!("{k:?}").eq_ignore_ascii_case(kind))
                .map(Strategy::Replay)
                .ok_or_else(|| format!("unknown message kind {kind:?}"));
        }
        Strategy::ALL.into_iter().find(|st| st.to_string() == s).ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// The three channels the adversary can sit on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    AnalystMa,
    AnalystCsp,
    MaCsp,
}

/// One frame as seen by the adversary.
#[derive(Clone, Debug, Serialize)]
pub struct Observed {
    pub link: Link,
    /// Towards the service the link was opened to.
    pub upstream: bool,
    pub kind: Option<String>,
    pub len: usize,
    pub altered: bool,
}

#[derive(Debug)]
pub struct Adversary {
    strategy: Strategy,
    armed: AtomicBool,
    captured: Mutex<HashMap<MessageKind, Vec<u8>>>,
    transcript: Mutex<Vec<Observed>>,
    rng: Mutex<StdRng>,
}

impl Adversary {
    pub fn new(strategy: Strategy, seed: u64) -> Arc<Self> {
        Arc::new(Self {
            strategy,
            armed: AtomicBool::new(false),
            captured: Mutex::new(HashMap::new()),
            transcript: Mutex::new(Vec::new()),
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Until armed the adversary only records and captures.
    pub fn arm(&self) {
        self.armed.store(true, Ordering::SeqCst);
    }

    pub fn transcript(&self) -> Vec<Observed> {
        self.transcript.lock().expect("transcript poisoned").clone()
    }

    pub fn altered(&self) -> usize {
        self.transcript().iter().filter(|o| o.altered).count()
    }

    /// Accepts connections on an ephemeral local port and relays each to
    /// `upstream`.
    pub async fn interpose(self: &Arc<Self>, link: Link, upstream: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let local = listener.local_addr()?;
        let adversary = self.clone();
        let task = tokio::spawn(async move {
            while let Ok((client, _)) = listener.accept().await {
                let Ok(server) = TcpStream::connect(upstream).await else { continue };
                let _ = client.set_nodelay(true);
                let _ = server.set_nodelay(true);
                let (client_rx, client_tx) = client.into_split();
                let (server_rx, server_tx) = server.into_split();
                tokio::spawn(adversary.clone().pump(link, true, client_rx, server_tx));
                tokio::spawn(adversary.clone().pump(link, false, server_rx, client_tx));
            }
        });
        Ok((local, task))
    }

    async fn pump(self: Arc<Self>, link: Link, upstream: bool, mut from: OwnedReadHalf, mut to: OwnedWriteHalf) {
        while let Ok(Some(frame)) = read_frame(&mut from).await {
            let delay = self.jitter();
            if !delay.is_zero() {
                tokio::time::sleep(delay).await;
            }
            let frame = self.intercept(link, upstream, frame);
            if write_frame(&mut to, &frame).await.is_err() {
                break;
            }
        }
        let _ = to.shutdown().await;
    }

    fn jitter(&self) -> Duration {
        let mut rng = self.rng.lock().expect("rng poisoned");
        if rng.gen_ratio(1, 4) {
            Duration::from_micros(rng.gen_range(100..1000))
        } else {
            Duration::ZERO
        }
    }

    fn intercept(&self, link: Link, upstream: bool, frame: Vec<u8>) -> Vec<u8> {
        let kind = MessageKind::peek(&frame);
        let armed = self.armed.load(Ordering::SeqCst);
        let mut out = None;
        if let Some(kind) = kind {
            if !armed {
                self.captured.lock().expect("capture poisoned").insert(kind, frame.clone());
            } else if self.strategy.target() == Some(kind) {
                let mut rng = self.rng.lock().expect("rng poisoned");
                out = match self.strategy {
                    Strategy::Passthrough => None,
                    Strategy::Replay(kind) => self.captured.lock().expect("capture poisoned").get(&kind).cloned(),
                    Strategy::SubstituteResult => substitute_result(&frame, &mut *rng),
                    Strategy::TamperIndices => tamper_indices(&frame, &mut *rng),
                    Strategy::TamperFunction => tamper_function(&frame),
                    Strategy::TamperKey => tamper_key(&frame, &mut *rng),
                };
            }
        }
        let altered = out.as_ref().is_some_and(|o| *o != frame);
        self.transcript.lock().expect("transcript poisoned").push(Observed {
            link,
            upstream,
            kind: kind.map(|k| format!("{k:?}")),
            len: frame.len(),
            altered,
        });
        out.unwrap_or(frame)
    }
}

/// Flips one random bit pattern in the masked value of a random cell.
pub fn substitute_result<R: Rng + ?Sized>(m7: &[u8], rng: &mut R) -> Option<Vec<u8>> {
    let span = ProtocolMessage::field_span(m7, RESULT_FIELD)?;
    let cells = span.len() / CELL_LEN;
    if cells == 0 {
        return None;
    }
    let at = span.start + rng.gen_range(0..cells) * CELL_LEN + rng.gen_range(0..MASKED_LEN);
    let mut out = m7.to_vec();
    out[at] ^= rng.gen_range(1..=255u8);
    Some(out)
}

/// Overwrites one key index digest with random bytes.
pub fn tamper_indices<R: Rng + ?Sized>(m8: &[u8], rng: &mut R) -> Option<Vec<u8>> {
    let span = ProtocolMessage::field_span(m8, INDEX_FIELD)?;
    let digests = span.len() / DIGEST_LEN;
    if digests == 0 {
        return None;
    }
    let start = span.start + rng.gen_range(0..digests) * DIGEST_LEN;
    let mut out = m8.to_vec();
    rng.fill(&mut out[start..start + DIGEST_LEN]);
    Some(out)
}

/// Turns `sum` into `avg` and vice versa.
pub fn tamper_function(m8: &[u8]) -> Option<Vec<u8>> {
    let span = ProtocolMessage::field_span(m8, FUNCTION_FIELD)?;
    let mut out = m8.to_vec();
    let byte = out.get_mut(span.start)?;
    *byte = if *byte == 1 { 2 } else { 1 };
    Some(out)
}

/// Flips bits of one random byte of the key envelope.
pub fn tamper_key<R: Rng + ?Sized>(m9: &[u8], rng: &mut R) -> Option<Vec<u8>> {
    let span = ProtocolMessage::field_span(m9, KEY_FIELD)?;
    if span.is_empty() {
        return None;
    }
    let mut out = m9.to_vec();
    out[rng.gen_range(span)] ^= rng.gen_range(1..=255u8);
    Some(out)
}
