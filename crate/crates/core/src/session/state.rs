//! Per-participant session state. Every change goes through [`SessionState::apply`]
//! on an already-persisted event, so replaying a log reproduces the state exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::events::{Event, EventKind};
use crate::time::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Instruction,
    Questionnaire,
    InstanceDecision,
    ScoreFeedback,
}

/// One entry of the linearized view sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewInstance {
    pub kind: ViewKind,
    /// Element id of the view; the instance id for instance decisions.
    pub view_id: String,
    #[serde(default)]
    pub experiment_id: Option<String>,
    #[serde(default)]
    pub task_id: Option<String>,
    #[serde(default)]
    pub instance_id: Option<String>,
    #[serde(default)]
    pub presented_order_index: Option<usize>,
    #[serde(default)]
    pub time_limit_ms: Option<i64>,
    #[serde(default)]
    pub shown_at: Option<Timestamp>,
    #[serde(default)]
    pub deadline: Option<Timestamp>,
}

impl ViewInstance {
    pub fn is_timed(&self) -> bool {
        self.time_limit_ms.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    InProgress,
    Completed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    NotEvaluated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResultRecord {
    Acknowledged {
        at: Timestamp,
    },
    Answers {
        answers: BTreeMap<String, Value>,
        at: Timestamp,
    },
    Decision {
        selected: Vec<String>,
        verdict: Verdict,
        at: Timestamp,
    },
    TimedOut {
        late_discarded: bool,
        at: Timestamp,
    },
    ScoreAcknowledged {
        score: f64,
        max: f64,
        at: Timestamp,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub user_login: String,
    pub protocol_id: String,
    pub sequence: Vec<ViewInstance>,
    pub cursor: usize,
    pub results: BTreeMap<usize, ResultRecord>,
    pub status: SessionStatus,
    pub created_at: Timestamp,
    pub completed_at: Option<Timestamp>,
    /// Sequence number of the last event applied.
    pub last_seq: u64,
    /// Server timestamp of the last event applied.
    pub last_ts: Timestamp,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("log is empty")]
    Empty,
    #[error("first event must be session_started, found {0}")]
    NotStarted(EventKind),
    #[error("event seq {got} out of order (expected {expected})")]
    Gap { expected: u64, got: u64 },
    #[error("event seq {seq}: {msg}")]
    Inconsistent { seq: u64, msg: String },
}

fn field<'a>(e: &'a Event, key: &str) -> Result<&'a Value, ReplayError> {
    e.payload.get(key).ok_or_else(|| ReplayError::Inconsistent {
        seq: e.seq,
        msg: format!("{} payload lacks \"{key}\"", e.kind),
    })
}

fn decode<T: serde::de::DeserializeOwned>(e: &Event, key: &str) -> Result<T, ReplayError> {
    serde_json::from_value(field(e, key)?.clone()).map_err(|err| ReplayError::Inconsistent {
        seq: e.seq,
        msg: format!("bad \"{key}\": {err}"),
    })
}

impl SessionState {
    /// Builds the initial state from a `session_started` event.
    pub fn from_started(e: &Event) -> Result<Self, ReplayError> {
        if e.kind != EventKind::SessionStarted {
            return Err(ReplayError::NotStarted(e.kind));
        }
        if e.seq != 1 {
            return Err(ReplayError::Gap { expected: 1, got: e.seq });
        }
        let sequence: Vec<ViewInstance> = decode(e, "sequence")?;
        Ok(Self {
            session_id: e.session_id.clone(),
            user_login: e.user_login.clone(),
            protocol_id: e.protocol_id.clone(),
            status: if sequence.is_empty() {
                SessionStatus::Completed
            } else {
                SessionStatus::InProgress
            },
            sequence,
            cursor: 0,
            results: BTreeMap::new(),
            created_at: e.server_ts,
            completed_at: None,
            last_seq: e.seq,
            last_ts: e.server_ts,
        })
    }

    /// Folds a full session log into its state.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Self, ReplayError> {
        let mut it = events.into_iter();
        let first = it.next().ok_or(ReplayError::Empty)?;
        let mut state = Self::from_started(first)?;
        for e in it {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn is_completed(&self) -> bool {
        self.status == SessionStatus::Completed
    }

    pub fn current(&self) -> Option<&ViewInstance> {
        self.sequence.get(self.cursor)
    }

    pub fn position_of(&self, view_id: &str) -> Option<usize> {
        self.sequence.iter().position(|v| v.view_id == view_id)
    }

    fn check_index(&self, e: &Event) -> Result<(), ReplayError> {
        let index: usize = decode(e, "view_index")?;
        if index != self.cursor || index >= self.sequence.len() {
            return Err(ReplayError::Inconsistent {
                seq: e.seq,
                msg: format!("{} addresses view {index} but cursor is {}", e.kind, self.cursor),
            });
        }
        Ok(())
    }

    fn record(&mut self, result: ResultRecord) {
        self.results.insert(self.cursor, result);
        self.cursor += 1;
        if self.cursor == self.sequence.len() {
            self.status = SessionStatus::Completed;
        }
    }

    /// True when the last view has been answered but the completion event
    /// has not been written yet.
    pub fn completion_pending(&self) -> bool {
        self.is_completed() && self.completed_at.is_none()
    }

    /// Applies one persisted event. Events must arrive in seq order.
    pub fn apply(&mut self, e: &Event) -> Result<(), ReplayError> {
        if e.seq != self.last_seq + 1 {
            return Err(ReplayError::Gap {
                expected: self.last_seq + 1,
                got: e.seq,
            });
        }
        let at = e.server_ts;
        match e.kind {
            EventKind::SessionStarted | EventKind::FailedLogin => {
                return Err(ReplayError::Inconsistent {
                    seq: e.seq,
                    msg: format!("unexpected {} inside a session", e.kind),
                })
            }
            EventKind::Login => {}
            EventKind::ViewShown => {
                self.check_index(e)?;
                let deadline: Option<Timestamp> = decode(e, "deadline")?;
                let view = &mut self.sequence[self.cursor];
                view.shown_at = Some(at);
                view.deadline = deadline;
            }
            EventKind::InstructionAck => {
                self.check_index(e)?;
                self.record(ResultRecord::Acknowledged { at });
            }
            EventKind::QuestionnaireResponse => {
                self.check_index(e)?;
                let answers = decode(e, "answers")?;
                self.record(ResultRecord::Answers { answers, at });
            }
            EventKind::Decision => {
                self.check_index(e)?;
                let selected = decode(e, "selected")?;
                let verdict = decode(e, "verdict")?;
                self.record(ResultRecord::Decision { selected, verdict, at });
            }
            EventKind::Timeout => {
                self.check_index(e)?;
                let late_discarded = decode(e, "late_discarded")?;
                self.record(ResultRecord::TimedOut { late_discarded, at });
            }
            EventKind::ScoreShown => {
                self.check_index(e)?;
                let score = decode(e, "score")?;
                let max = decode(e, "max")?;
                self.record(ResultRecord::ScoreAcknowledged { score, max, at });
            }
            EventKind::SessionCompleted => {
                if self.cursor != self.sequence.len() {
                    return Err(ReplayError::Inconsistent {
                        seq: e.seq,
                        msg: format!("completion at cursor {} of {}", self.cursor, self.sequence.len()),
                    });
                }
                self.completed_at = Some(at);
            }
        }
        self.last_seq = e.seq;
        self.last_ts = self.last_ts.max(e.server_ts);
        Ok(())
    }
}
