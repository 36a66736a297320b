//! Append-only participant event log.
//!
//! Each session is its own stream with gap-free sequence numbers, starting
//! at one. Failed logins, which have no session, go to the audit stream
//! (empty session id).

mod export;
mod jsonl;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::time::Timestamp;

pub use export::{export_results, export_rows, ExportFormat, ExportRow, CSV_HEADER};
pub use jsonl::JsonlStore;

/// Stream id for events that belong to no session.
pub const AUDIT_STREAM: &str = "";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SessionStarted,
    Login,
    FailedLogin,
    ViewShown,
    InstructionAck,
    QuestionnaireResponse,
    Decision,
    Timeout,
    ScoreShown,
    SessionCompleted,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::SessionStarted,
        EventKind::Login,
        EventKind::FailedLogin,
        EventKind::ViewShown,
        EventKind::InstructionAck,
        EventKind::QuestionnaireResponse,
        EventKind::Decision,
        EventKind::Timeout,
        EventKind::ScoreShown,
        EventKind::SessionCompleted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SessionStarted => "session_started",
            EventKind::Login => "login",
            EventKind::FailedLogin => "failed_login",
            EventKind::ViewShown => "view_shown",
            EventKind::InstructionAck => "instruction_ack",
            EventKind::QuestionnaireResponse => "questionnaire_response",
            EventKind::Decision => "decision",
            EventKind::Timeout => "timeout",
            EventKind::ScoreShown => "score_shown",
            EventKind::SessionCompleted => "session_completed",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRefs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presented_order_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub session_id: String,
    pub user_login: String,
    pub protocol_id: String,
    pub kind: EventKind,
    #[serde(default)]
    pub refs: EventRefs,
    #[serde(default)]
    pub payload: Value,
    pub server_ts: Timestamp,
    #[serde(default)]
    pub client_elapsed_ms: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventFilter {
    pub protocol_id: Option<String>,
    pub session_id: Option<String>,
    pub kind: Option<EventKind>,
}

impl EventFilter {
    pub fn session(id: impl Into<String>) -> Self {
        Self {
            session_id: Some(id.into()),
            ..Self::default()
        }
    }

    pub fn protocol(id: impl Into<String>) -> Self {
        Self {
            protocol_id: Some(id.into()),
            ..Self::default()
        }
    }

    pub fn with_kind(mut self, kind: EventKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn matches(&self, e: &Event) -> bool {
        self.protocol_id.as_deref().is_none_or(|p| p == e.protocol_id)
            && self.session_id.as_deref().is_none_or(|s| s == e.session_id)
            && self.kind.is_none_or(|k| k == e.kind)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("sequence conflict on session {session_id:?}: expected seq {expected}, got {got}")]
    SequenceConflict { session_id: String, expected: u64, got: u64 },
    #[error("storage failure: {0}")]
    Storage(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Storage(e.to_string())
    }
}

/// Durable, append-only event storage. There is deliberately no update or
/// delete operation.
pub trait EventStore: Send + Sync {
    /// Appends `event` if `event.seq` is the next number for its session and
    /// returns that number once the write is durable.
    fn append(&self, event: &Event) -> Result<u64, StoreError>;

    /// Events matching every set filter field, ordered by (session_id, seq).
    fn list(&self, filter: &EventFilter) -> Vec<Event>;

    fn session_ids(&self) -> Vec<String>;

    fn last_seq(&self, session_id: &str) -> u64;
}

/// Volatile store used for simulations and tests.
#[derive(Debug, Default)]
pub struct MemoryStore {
    streams: Mutex<BTreeMap<String, Vec<Event>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

pub(crate) fn check_next(stream: &[Event], event: &Event) -> Result<(), StoreError> {
    let expected = stream.last().map_or(1, |e| e.seq + 1);
    if event.seq != expected {
        return Err(StoreError::SequenceConflict {
            session_id: event.session_id.clone(),
            expected,
            got: event.seq,
        });
    }
    Ok(())
}

impl EventStore for MemoryStore {
    fn append(&self, event: &Event) -> Result<u64, StoreError> {
        let mut streams = self.streams.lock().expect("event store poisoned");
        let stream = streams.entry(event.session_id.clone()).or_default();
        check_next(stream, event)?;
        stream.push(event.clone());
        Ok(event.seq)
    }

    fn list(&self, filter: &EventFilter) -> Vec<Event> {
        let streams = self.streams.lock().expect("event store poisoned");
        collect_matching(&streams, filter)
    }

    fn session_ids(&self) -> Vec<String> {
        let streams = self.streams.lock().expect("event store poisoned");
        streams.keys().filter(|k| k.as_str() != AUDIT_STREAM).cloned().collect()
    }

    fn last_seq(&self, session_id: &str) -> u64 {
        let streams = self.streams.lock().expect("event store poisoned");
        streams.get(session_id).and_then(|s| s.last()).map_or(0, |e| e.seq)
    }
}

pub(crate) fn collect_matching(streams: &BTreeMap<String, Vec<Event>>, filter: &EventFilter) -> Vec<Event> {
    let pick = |events: &Vec<Event>| events.iter().filter(|e| filter.matches(e)).cloned().collect::<Vec<_>>();
    match &filter.session_id {
        Some(id) => streams.get(id).map(pick).unwrap_or_default(),
        None => streams.values().flat_map(pick).collect(),
    }
}
