//! Analyst side of a read: token construction and result decryption.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use psfe_core::crypto::{pk_decrypt, EncryptionKeyPair, PartyKeys, PublicIdentity, VerificationKey};
use psfe_core::dataset::NumericCell;
use psfe_core::mife::GroupElement;
use psfe_core::wire::{
    Clock, ErrorClass, FunctionDescriptor, KeyGrant, MessageKind, MessageSigner, Payload, QueryId, ResultList,
    SearchToken, Verifier, WireError, NONCE_LEN,
};
use rand::RngCore;

use crate::error::ClientError;

/// `centered(Σ masked − key)`: the sum the key was issued for, plus the
/// key's noise with its sign flipped.
pub fn analyst_decrypt(cells: &[NumericCell], key: GroupElement) -> Result<i64, ClientError> {
    if cells.is_empty() {
        return Err(ClientError::InvalidParameter("result list is empty".into()));
    }
    Ok((cells.iter().map(|c| c.masked).sum::<GroupElement>() - key).centered())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Answer {
    pub query: QueryId,
    pub function: FunctionDescriptor,
    /// The noisy sum.
    pub sum: i64,
    /// `|R|`, exact.
    pub count: usize,
    /// The noisy sum for `sum`, the noisy sum over `count` for `avg`.
    pub value: f64,
    pub epsilon: f64,
    pub sensitivity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryOutcome {
    Answer(Answer),
    NoResults,
    Refused { class: ErrorClass, detail: String },
}

impl QueryOutcome {
    pub fn answer(&self) -> Option<&Answer> {
        match self {
            QueryOutcome::Answer(a) => Some(a),
            _ => None,
        }
    }

    /// One `key=value` line.
    pub fn to_line(&self) -> String {
        match self {
            QueryOutcome::Answer(a) => format!(
                "status=ok fn={} value={} sum={} count={} epsilon={} sensitivity={} query={}",
                a.function, a.value, a.sum, a.count, a.epsilon, a.sensitivity, a.query
            ),
            QueryOutcome::NoResults => "status=no-results count=0".to_owned(),
            QueryOutcome::Refused { class, detail } => {
                format!("status=refused class={class} detail={detail:?}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Progress {
    /// One leg of `query` has verified; the other is still outstanding.
    Waiting(QueryId),
    Done(QueryOutcome),
}

#[derive(Debug, Default)]
struct PendingRead {
    function: Option<FunctionDescriptor>,
    grant: Option<KeyGrant>,
    result: Option<ResultList>,
}

/// Query state for one analyst. Holds no key material beyond the noisy
/// functional keys of reads still in flight.
#[derive(Debug)]
pub struct AnalystSession {
    signer: MessageSigner,
    encryption: EncryptionKeyPair,
    verifier: Verifier,
    csp: VerificationKey,
    ma: VerificationKey,
    pending: Mutex<HashMap<QueryId, PendingRead>>,
}

impl AnalystSession {
    pub fn new(
        keys: PartyKeys,
        csp: VerificationKey,
        ma: VerificationKey,
        clock: Arc<dyn Clock>,
        window: Duration,
    ) -> Self {
        Self {
            signer: MessageSigner::new(keys.signing, clock.clone()),
            encryption: keys.encryption,
            verifier: Verifier::new(window, clock),
            csp,
            ma,
            pending: Mutex::new(HashMap::new()),
        }
    }

    pub fn public(&self) -> PublicIdentity {
        PublicIdentity { verification: self.signer.verification_key(), encryption: self.encryption.public_key() }
    }

    /// Reads with one leg verified and the other outstanding.
    pub fn in_flight(&self) -> usize {
        self.pending.lock().expect("pending poisoned").len()
    }

    /// Builds `τ = ⟨H(value), H(variable), f⟩` and its signed M5.
    pub fn token(
        &self,
        value: &str,
        variable: &str,
        function: FunctionDescriptor,
    ) -> Result<(SearchToken, Vec<u8>), ClientError> {
        let token = SearchToken::new(value, variable, function);
        let mut nonce = [0u8; NONCE_LEN];
        rand::thread_rng().fill_bytes(&mut nonce);
        Ok((token, self.signer.sign_bytes(Payload::M5 { token, nonce })?))
    }

    /// Signed request for the CSP to hand over the result of `query`.
    pub fn fetch(&self, query: QueryId) -> Result<Vec<u8>, ClientError> {
        Ok(self.signer.sign_bytes(Payload::Fetch { query })?)
    }

    /// The MA's answer to the M5 of `token`.
    pub fn accept_ma_reply(&self, token: &SearchToken, bytes: &[u8]) -> Result<Progress, ClientError> {
        let msg = self.verifier.verify(
            bytes,
            &[MessageKind::M9, MessageKind::NoResults, MessageKind::Refusal],
            &[self.ma, self.csp],
        )?;
        let from_ma = msg.sender == self.ma;
        match msg.payload {
            Payload::M9 { query, key } if from_ma => {
                let plain = pk_decrypt(&self.encryption, &key).map_err(|_| ClientError::Decryption)?;
                let grant = KeyGrant::from_bytes(&plain)?;
                self.update(query, |p| {
                    p.function = Some(token.function);
                    p.grant = Some(grant);
                })
            }
            Payload::NoResults { query } if !from_ma => Ok(self.finish(query, QueryOutcome::NoResults)),
            Payload::Refusal { query, class, detail } => {
                Ok(self.finish(query, QueryOutcome::Refused { class, detail }))
            }
            _ => Err(WireError::UnknownSender.into()),
        }
    }

    /// The CSP's answer to a fetch.
    pub fn accept_csp_reply(&self, bytes: &[u8]) -> Result<Progress, ClientError> {
        let msg = self.verifier.verify(bytes, &[MessageKind::M7, MessageKind::Refusal], &[self.csp])?;
        match msg.payload {
            Payload::M7 { query, result } => self.update(query, |p| p.result = Some(result)),
            Payload::Refusal { query, class, detail } => {
                Ok(self.finish(query, QueryOutcome::Refused { class, detail }))
            }
            _ => unreachable!("kind checked"),
        }
    }

    /// Drops any partial state for `query`.
    pub fn abandon(&self, query: QueryId) {
        self.pending.lock().expect("pending poisoned").remove(&query);
    }

    fn finish(&self, query: QueryId, outcome: QueryOutcome) -> Progress {
        self.abandon(query);
        Progress::Done(outcome)
    }

    fn update(&self, query: QueryId, f: impl FnOnce(&mut PendingRead)) -> Result<Progress, ClientError> {
        let mut pending = self.pending.lock().expect("pending poisoned");
        let entry = pending.entry(query).or_default();
        let before = (entry.grant.is_some(), entry.result.is_some());
        f(entry);
        if before == (entry.grant.is_some(), entry.result.is_some()) {
            return Err(ClientError::ProtocolState(format!("duplicate leg for query {query}")));
        }
        let (Some(function), Some(grant), Some(result)) = (entry.function, entry.grant, &entry.result) else {
            return Ok(Progress::Waiting(query));
        };
        let count = result.0.len();
        let outcome = if count == grant.cells as usize {
            analyst_decrypt(&result.0, grant.key).map(|sum| {
                let value = match function {
                    FunctionDescriptor::Sum => sum as f64,
                    FunctionDescriptor::Avg => sum as f64 / count as f64,
                };
                Answer {
                    query,
                    function,
                    sum,
                    count,
                    value,
                    epsilon: grant.epsilon,
                    sensitivity: grant.sensitivity,
                }
            })
        } else {
            Err(ClientError::ProtocolState(format!("key covers {} cells, result has {count}", grant.cells)))
        };
        pending.remove(&query);
        outcome.map(|a| Progress::Done(QueryOutcome::Answer(a)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use psfe_core::crypto::Digest;

    fn cells(masked: &[u64]) -> Vec<NumericCell> {
        masked.iter().map(|&m| NumericCell { masked: GroupElement::new(m), key_index: Digest::default() }).collect()
    }

    #[test]
    fn decrypt_examples() {
        assert_eq!(analyst_decrypt(&cells(&[8, 11]), GroupElement::new(12)).unwrap(), 7);
        assert_eq!(analyst_decrypt(&cells(&[8, 11]), GroupElement::new(17)).unwrap(), 2);
        let key = GroupElement::new(0xdead_beef_0000_0001);
        let x = 4242;
        let single = cells(&[(key + GroupElement::new(x)).value()]);
        assert_eq!(analyst_decrypt(&single, key).unwrap(), x as i64);
        assert!(matches!(analyst_decrypt(&[], key), Err(ClientError::InvalidParameter(_))));
    }
}
