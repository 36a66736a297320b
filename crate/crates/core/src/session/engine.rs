//! The participant journey: linearization, view rendering, submissions,
//! server-side timing, feedback and scores.
//!
//! Every mutation follows the same pattern: build the event, append it to
//! the store, and only then fold it into the in-memory [`SessionState`].
//! A failed append therefore leaves the state untouched.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::render::{
    instruction_content, Progress, RenderedMedia, RenderedPrediction, RenderedQuestion, RenderedView, ViewContent,
    ViewResponse,
};
use super::state::{ReplayError, ResultRecord, SessionState, Verdict, ViewInstance, ViewKind};
use super::submission::{check_answers, check_decision, Submission, SubmissionPayload};
use crate::config::{
    ExperimentElement, FeedbackPolicy, InstanceSpec, ProtocolElement, ProtocolSpec, TaskSpec,
};
use crate::events::{Event, EventFilter, EventKind, EventRefs, EventStore, StoreError};
use crate::order::{derive_instance_order, fnv1a64};
use crate::time::Timestamp;

/// Timing tolerances. The defaults are the production values; tests may
/// tighten them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    /// Late answers within this many milliseconds after the deadline are
    /// still accepted, to absorb network latency.
    pub grace_ms: i64,
    /// A client timeout notice this many milliseconds before the deadline
    /// is still honored, to absorb clock skew.
    pub premature_tolerance_ms: i64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            grace_ms: 2000,
            premature_tolerance_ms: 1000,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("user is assigned to protocol {assigned:?}, not {requested:?}")]
    AssignmentMismatch { assigned: String, requested: String },
    #[error("{0}")]
    StaleView(String),
    #[error("{0}")]
    PayloadInvalid(String),
    #[error("the time limit for view {view_id:?} has expired; the answer was discarded")]
    TimedOut { view_id: String },
    #[error("view {view_id:?} is not over yet ({remaining_ms} ms left)")]
    Premature { view_id: String, remaining_ms: i64 },
    #[error("view {0:?} has no time limit")]
    NotTimed(String),
    #[error("task {task_id:?} is not complete")]
    TaskIncomplete { task_id: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("session log is inconsistent: {0}")]
    Replay(#[from] ReplayError),
    #[error("session refers to {0} which the protocol does not define")]
    SpecMismatch(String),
}

/// Instance-level feedback returned to the participant after a decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResult {
    pub verdict: Verdict,
    /// Only populated under `correctness_and_expected`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub advanced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub score: f64,
    pub max: f64,
    pub rendered: String,
}

/// Session ids are derived from (protocol, login) so that a participant
/// always lands on the same log, and are safe to use as file names.
pub fn session_id_for(protocol_id: &str, login: &str) -> String {
    let readable: String = login
        .chars()
        .take(48)
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let hash = fnv1a64(format!("session|{protocol_id}|{login}").as_bytes());
    format!("{readable}-{hash:016x}")
}

/// Flattens the protocol tree depth-first in declared order, expanding each
/// task into its instances in the participant's presented order.
pub fn linearize(spec: &ProtocolSpec, login: &str) -> Vec<ViewInstance> {
    let mut out = Vec::new();
    let plain = |kind, id: &str, experiment: Option<&str>| ViewInstance {
        kind,
        view_id: id.to_string(),
        experiment_id: experiment.map(str::to_string),
        task_id: None,
        instance_id: None,
        presented_order_index: None,
        time_limit_ms: None,
        shown_at: None,
        deadline: None,
    };
    for element in &spec.elements {
        match element {
            ProtocolElement::Instruction(v) => out.push(plain(ViewKind::Instruction, &v.id, None)),
            ProtocolElement::Questionnaire(v) => out.push(plain(ViewKind::Questionnaire, &v.id, None)),
            ProtocolElement::Experiment(exp) => {
                let eid = Some(exp.id.as_str());
                for child in &exp.elements {
                    match child {
                        ExperimentElement::Instruction(v) => out.push(plain(ViewKind::Instruction, &v.id, eid)),
                        ExperimentElement::Questionnaire(v) => out.push(plain(ViewKind::Questionnaire, &v.id, eid)),
                        ExperimentElement::ScoreFeedback(v) => {
                            let mut view = plain(ViewKind::ScoreFeedback, &v.id, eid);
                            view.task_id = Some(v.task_ref.clone());
                            out.push(view);
                        }
                        ExperimentElement::Task(task) => {
                            let order = derive_instance_order(
                                &spec.id,
                                &task.id,
                                login,
                                task.instances.len(),
                                task.randomize_instances,
                            );
                            for (position, &i) in order.iter().enumerate() {
                                let instance = &task.instances[i];
                                out.push(ViewInstance {
                                    kind: ViewKind::InstanceDecision,
                                    view_id: instance.id.clone(),
                                    experiment_id: Some(exp.id.clone()),
                                    task_id: Some(task.id.clone()),
                                    instance_id: Some(instance.id.clone()),
                                    presented_order_index: Some(position),
                                    time_limit_ms: task.time_limit_ms(),
                                    shown_at: None,
                                    deadline: None,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Renders a number without a trailing ".0" for integral values.
pub fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn refs_for(view: &ViewInstance) -> EventRefs {
    EventRefs {
        experiment_id: view.experiment_id.clone(),
        task_id: view.task_id.clone(),
        view_id: Some(view.view_id.clone()),
        instance_id: view.instance_id.clone(),
        presented_order_index: view.presented_order_index,
    }
}

/// Labels in the order the task declares them, so logs do not depend on
/// the order in which a client happened to list its selection.
fn canonical(options: &[String], labels: &[String]) -> Vec<String> {
    options.iter().filter(|o| labels.contains(o)).cloned().collect()
}

fn same_set(a: &[String], b: &[String]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

/// Drives sessions of one protocol against one event store.
pub struct Engine<'a> {
    pub spec: &'a ProtocolSpec,
    pub store: &'a dyn EventStore,
    pub config: EngineConfig,
}

impl<'a> Engine<'a> {
    pub fn new(spec: &'a ProtocolSpec, store: &'a dyn EventStore, config: EngineConfig) -> Self {
        Self { spec, store, config }
    }

    /// Starts the participant's session, or resumes it from the log when one
    /// exists. Returns the state and whether it was resumed.
    pub fn start_session(
        &self,
        login: &str,
        assigned_protocol: &str,
        now: Timestamp,
    ) -> Result<(SessionState, bool), EngineError> {
        if assigned_protocol != self.spec.id {
            return Err(EngineError::AssignmentMismatch {
                assigned: assigned_protocol.to_string(),
                requested: self.spec.id.clone(),
            });
        }
        let session_id = session_id_for(&self.spec.id, login);
        let existing = self.store.list(&EventFilter::session(&session_id));
        if !existing.is_empty() {
            return Ok((SessionState::replay(&existing)?, true));
        }
        let sequence = linearize(self.spec, login);
        let started = Event {
            seq: 1,
            session_id,
            user_login: login.to_string(),
            protocol_id: self.spec.id.clone(),
            kind: EventKind::SessionStarted,
            refs: EventRefs::default(),
            payload: json!({ "sequence": sequence }),
            server_ts: now,
            client_elapsed_ms: None,
        };
        self.store.append(&started)?;
        Ok((SessionState::from_started(&started)?, false))
    }

    fn commit(
        &self,
        state: &mut SessionState,
        kind: EventKind,
        refs: EventRefs,
        payload: Value,
        now: Timestamp,
        client_elapsed_ms: Option<u64>,
    ) -> Result<Event, EngineError> {
        let event = Event {
            seq: state.last_seq + 1,
            session_id: state.session_id.clone(),
            user_login: state.user_login.clone(),
            protocol_id: state.protocol_id.clone(),
            kind,
            refs,
            payload,
            server_ts: now.max(state.last_ts),
            client_elapsed_ms,
        };
        self.store.append(&event)?;
        state.apply(&event)?;
        Ok(event)
    }

    /// Appends a `login` event for an authenticated participant.
    pub fn record_login(&self, state: &mut SessionState, resumed: bool, now: Timestamp) -> Result<(), EngineError> {
        self.commit(state, EventKind::Login, EventRefs::default(), json!({ "resumed": resumed }), now, None)?;
        Ok(())
    }

    fn finish_if_done(&self, state: &mut SessionState, now: Timestamp) -> Result<(), EngineError> {
        if state.completion_pending() {
            self.commit(state, EventKind::SessionCompleted, EventRefs::default(), json!({}), now, None)?;
        }
        Ok(())
    }

    fn record_timeout(
        &self,
        state: &mut SessionState,
        late_discarded: bool,
        now: Timestamp,
        client_elapsed_ms: Option<u64>,
    ) -> Result<(), EngineError> {
        let view = state.current().expect("timeout on an open view");
        let refs = refs_for(view);
        let payload = json!({ "view_index": state.cursor, "late_discarded": late_discarded });
        self.commit(state, EventKind::Timeout, refs, payload, now, client_elapsed_ms)?;
        self.finish_if_done(state, now)
    }

    fn expired(&self, view: &ViewInstance, now: Timestamp) -> bool {
        view.deadline
            .is_some_and(|deadline| now.millis_since(deadline) > self.config.grace_ms)
    }

    /// Returns the view the participant should see now. The first render of
    /// a view logs `view_shown` and fixes its deadline; a timed view whose
    /// deadline (plus grace) has passed is timed out before anything is
    /// rendered.
    pub fn current_view(&self, state: &mut SessionState, now: Timestamp) -> Result<ViewResponse, EngineError> {
        loop {
            self.finish_if_done(state, now)?;
            let Some(view) = state.current() else {
                return Ok(ViewResponse::Completed {
                    message: self.spec.completion.message.clone(),
                    redirect_url: self.spec.completion.redirect_url.clone(),
                });
            };
            if view.shown_at.is_none() {
                let shown = now.max(state.last_ts);
                let deadline = view.time_limit_ms.map(|ms| shown.plus_millis(ms));
                let refs = refs_for(view);
                let payload = json!({ "view_index": state.cursor, "deadline": deadline });
                self.commit(state, EventKind::ViewShown, refs, payload, now, None)?;
                continue;
            }
            if self.expired(view, now) {
                self.record_timeout(state, false, now, None)?;
                continue;
            }
            return self.render(state, now).map(|v| ViewResponse::InProgress(Box::new(v)));
        }
    }

    fn task_of(&self, view: &ViewInstance) -> Result<&'a TaskSpec, EngineError> {
        let id = view.task_id.as_deref().unwrap_or_default();
        self.spec
            .task(id)
            .ok_or_else(|| EngineError::SpecMismatch(format!("task {id:?}")))
    }

    fn instance_of(&self, view: &ViewInstance) -> Result<(&'a TaskSpec, &'a InstanceSpec), EngineError> {
        let task = self.task_of(view)?;
        let id = view.instance_id.as_deref().unwrap_or_default();
        let instance = task
            .instance(id)
            .ok_or_else(|| EngineError::SpecMismatch(format!("instance {id:?}")))?;
        Ok((task, instance))
    }

    fn render(&self, state: &SessionState, now: Timestamp) -> Result<RenderedView, EngineError> {
        let view = state.current().expect("render needs an open view");
        let missing = || EngineError::SpecMismatch(format!("view {:?}", view.view_id));
        let content = match view.kind {
            ViewKind::Instruction => instruction_content(self.spec.instruction(&view.view_id).ok_or_else(missing)?),
            ViewKind::Questionnaire => {
                let q = self.spec.questionnaire(&view.view_id).ok_or_else(missing)?;
                ViewContent::Questionnaire {
                    title: q.title.clone(),
                    questions: q.questions.iter().map(RenderedQuestion::from).collect(),
                }
            }
            ViewKind::InstanceDecision => {
                let (task, instance) = self.instance_of(view)?;
                let remaining_time_s = view
                    .deadline
                    .map(|deadline| deadline.millis_since(now).max(0) as f64 / 1000.0);
                ViewContent::InstanceDecision {
                    task_id: task.id.clone(),
                    title: task.title.clone(),
                    instance: instance.instance.as_ref().map(RenderedMedia::from),
                    prediction: instance.prediction.as_ref().map(|p| RenderedPrediction {
                        media: RenderedMedia::from(&p.media),
                        position: p.position,
                    }),
                    explanations: instance.explanations.iter().map(RenderedMedia::from).collect(),
                    prompt: instance
                        .prompt_override
                        .clone()
                        .unwrap_or_else(|| task.decision.prompt.clone()),
                    options: task.decision.options.clone(),
                    exclusive: task.decision.exclusive,
                    remaining_time_s,
                    time_limit_s: task.time_limit_s,
                    progress: task.show_progress.then(|| Progress {
                        index: view.presented_order_index.unwrap_or(0) + 1,
                        total: task.instances.len(),
                    }),
                }
            }
            ViewKind::ScoreFeedback => {
                let task_id = view.task_id.clone().unwrap_or_default();
                let score = self.compute_task_score(state, &task_id)?;
                ViewContent::ScoreFeedback {
                    task_id,
                    text: score.rendered,
                    score: score.score,
                    max: score.max,
                }
            }
        };
        Ok(RenderedView {
            view_id: view.view_id.clone(),
            position: state.cursor,
            total_views: state.sequence.len(),
            content,
        })
    }

    /// Accepts the participant's answer to the current view.
    pub fn submit(&self, state: &mut SessionState, sub: &Submission, now: Timestamp) -> Result<SubmitOutcome, EngineError> {
        let Some(view) = state.current() else {
            return Err(EngineError::StaleView("the session is already completed".into()));
        };
        if view.view_id != sub.view_id {
            let msg = match state.position_of(&sub.view_id) {
                Some(p) if p < state.cursor => format!("view {:?} was already answered", sub.view_id),
                Some(_) => format!("view {:?} is not the current view", sub.view_id),
                None => format!("unknown view {:?}", sub.view_id),
            };
            return Err(EngineError::StaleView(msg));
        }
        if view.shown_at.is_none() {
            return Err(EngineError::StaleView(format!("view {:?} has not been served yet", sub.view_id)));
        }
        if self.expired(view, now) {
            self.record_timeout(state, true, now, sub.client_elapsed_ms)?;
            return Err(EngineError::TimedOut {
                view_id: sub.view_id.clone(),
            });
        }
        let view = view.clone();
        let index = state.cursor;
        let refs = refs_for(&view);
        let wrong_kind = || {
            EngineError::PayloadInvalid(format!(
                "a {} payload does not answer a {:?} view",
                sub.payload.kind_name(),
                view.kind
            ))
        };
        let mut feedback = None;
        match (&sub.payload, view.kind) {
            (SubmissionPayload::Ack, ViewKind::Instruction) => {
                let payload = json!({ "view_index": index });
                self.commit(state, EventKind::InstructionAck, refs, payload, now, sub.client_elapsed_ms)?;
            }
            (SubmissionPayload::Ack, ViewKind::ScoreFeedback) => {
                let task_id = view.task_id.clone().unwrap_or_default();
                let score = self.compute_task_score(state, &task_id)?;
                let payload = json!({
                    "view_index": index,
                    "score": score.score,
                    "max": score.max,
                    "rendered": score.rendered,
                });
                self.commit(state, EventKind::ScoreShown, refs, payload, now, sub.client_elapsed_ms)?;
            }
            (SubmissionPayload::Answers { answers }, ViewKind::Questionnaire) => {
                let q = self
                    .spec
                    .questionnaire(&view.view_id)
                    .ok_or_else(|| EngineError::SpecMismatch(format!("questionnaire {:?}", view.view_id)))?;
                check_answers(q, answers).map_err(EngineError::PayloadInvalid)?;
                let answers: serde_json::Map<String, Value> = answers
                    .iter()
                    .filter(|(_, v)| !v.is_null())
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                let payload = json!({ "view_index": index, "answers": answers });
                self.commit(state, EventKind::QuestionnaireResponse, refs, payload, now, sub.client_elapsed_ms)?;
            }
            (SubmissionPayload::Decision { selected }, ViewKind::InstanceDecision) => {
                let (task, instance) = self.instance_of(&view)?;
                check_decision(&task.decision, selected).map_err(EngineError::PayloadInvalid)?;
                let selected = canonical(&task.decision.options, selected);
                let verdict = match &instance.expected {
                    Some(expected) if same_set(&selected, expected) => Verdict::Correct,
                    Some(_) => Verdict::Incorrect,
                    None => Verdict::NotEvaluated,
                };
                let payload = json!({ "view_index": index, "selected": selected, "verdict": verdict });
                self.commit(state, EventKind::Decision, refs, payload, now, sub.client_elapsed_ms)?;
                feedback = match task.instance_feedback {
                    FeedbackPolicy::None => None,
                    FeedbackPolicy::CorrectnessOnly => Some(FeedbackResult { verdict, expected: None }),
                    FeedbackPolicy::CorrectnessAndExpected => Some(FeedbackResult {
                        verdict,
                        expected: instance
                            .expected
                            .as_ref()
                            .map(|e| canonical(&task.decision.options, e)),
                    }),
                };
            }
            _ => return Err(wrong_kind()),
        }
        self.finish_if_done(state, now)?;
        Ok(SubmitOutcome {
            advanced: true,
            feedback,
        })
    }

    /// Handles the client's "time is up" notice. Idempotent with `submit`:
    /// a notice for a view that was already answered is a no-op.
    pub fn notify_timeout(&self, state: &mut SessionState, view_id: &str, now: Timestamp) -> Result<bool, EngineError> {
        match state.position_of(view_id) {
            Some(p) if p < state.cursor => return Ok(false),
            Some(p) if p == state.cursor => {}
            Some(_) => return Err(EngineError::StaleView(format!("view {view_id:?} is not the current view"))),
            None => return Err(EngineError::StaleView(format!("unknown view {view_id:?}"))),
        }
        let view = state.current().expect("cursor addresses an open view");
        if !view.is_timed() {
            return Err(EngineError::NotTimed(view_id.to_string()));
        }
        let Some(deadline) = view.deadline else {
            return Err(EngineError::Premature {
                view_id: view_id.to_string(),
                remaining_ms: view.time_limit_ms.unwrap_or_default(),
            });
        };
        let remaining_ms = deadline.millis_since(now);
        if remaining_ms > self.config.premature_tolerance_ms {
            return Err(EngineError::Premature {
                view_id: view_id.to_string(),
                remaining_ms,
            });
        }
        self.record_timeout(state, false, now, None)?;
        Ok(true)
    }

    /// Count-based score for one task from the recorded decisions.
    pub fn compute_task_score(&self, state: &SessionState, task_id: &str) -> Result<ScoreResult, EngineError> {
        let task = self
            .spec
            .task(task_id)
            .ok_or_else(|| EngineError::UnknownTask(task_id.to_string()))?;
        let mut correct = 0usize;
        let mut evaluated = 0usize;
        for instance in &task.instances {
            let position = state.sequence.iter().position(|v| {
                v.kind == ViewKind::InstanceDecision
                    && v.task_id.as_deref() == Some(task_id)
                    && v.instance_id.as_deref() == Some(instance.id.as_str())
            });
            let Some(result) = position.and_then(|p| state.results.get(&p)) else {
                return Err(EngineError::TaskIncomplete {
                    task_id: task_id.to_string(),
                });
            };
            let Some(expected) = &instance.expected else {
                continue;
            };
            evaluated += 1;
            if let ResultRecord::Decision { selected, .. } = result {
                if same_set(selected, expected) {
                    correct += 1;
                }
            }
        }
        let points = task.scoring.points_per_correct;
        let score = points * correct as f64;
        let max = points * evaluated as f64;
        let rendered = task
            .scoring
            .template
            .replace("{score}", &format_number(score))
            .replace("{max}", &format_number(max));
        Ok(ScoreResult { score, max, rendered })
    }
}

#[cfg(test)]
#[path = "engine_tests.rs"]
mod tests;
