//! Per-service log of verified and rejected messages.

use std::sync::Mutex;

use psfe_core::wire::{ErrorClass, MessageKind, QueryId, Timestamp};

use crate::error::ServiceError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Accepted,
    Rejected(ErrorClass),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub at: Timestamp,
    pub kind: Option<MessageKind>,
    pub query: Option<QueryId>,
    pub outcome: Outcome,
    pub detail: String,
}

#[derive(Debug)]
pub struct EventLog {
    service: &'static str,
    events: Mutex<Vec<Event>>,
}

impl EventLog {
    pub fn new(service: &'static str) -> Self {
        Self { service, events: Mutex::new(Vec::new()) }
    }

    pub fn record(&self, event: Event) {
        match &event.outcome {
            Outcome::Accepted => tracing::info!(
                service = self.service,
                kind = ?event.kind,
                query = ?event.query,
                "accepted {}",
                event.detail
            ),
            Outcome::Rejected(class) => tracing::warn!(
                service = self.service,
                kind = ?event.kind,
                query = ?event.query,
                class = %class,
                "rejected: {}",
                event.detail
            ),
        }
        self.events.lock().expect("event log poisoned").push(event);
    }

    /// Records a handler result: `error` is `None` on success.
    pub fn note(
        &self,
        at: Timestamp,
        kind: Option<MessageKind>,
        query: Option<QueryId>,
        error: Option<&ServiceError>,
        ok: &str,
    ) {
        let (outcome, detail) = match error {
            None => (Outcome::Accepted, ok.to_owned()),
            Some(e) => (Outcome::Rejected(e.class()), e.to_string()),
        };
        self.record(Event { at, kind, query, outcome, detail });
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.events.lock().expect("event log poisoned").clone()
    }

    /// Classes of every rejection so far, in order.
    pub fn rejections(&self) -> Vec<ErrorClass> {
        self.snapshot()
            .into_iter()
            .filter_map(|e| match e.outcome {
                Outcome::Rejected(c) => Some(c),
                Outcome::Accepted => None,
            })
            .collect()
    }
}
