//! Headless cohorts: synthetic participants driven through the same
//! [`Platform`] operations the HTTP API uses, on a virtual clock.
//!
//! A participant's choices depend only on (seed, participant index), and
//! each participant gets its own clock starting at [`SIM_EPOCH_MS`], so a
//! report is a pure function of (protocol, n, policy, seed, delay).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ProtocolSpec;
use crate::connection::{PasswordCost, UserImport};
use crate::events::EventFilter;
use crate::order::{fnv1a64, SplitMix64};
use crate::platform::{LoginOutcome, Platform, PlatformError};
use crate::session::{
    session_id_for, Engine, EngineConfig, EngineError, RenderedQuestion, RenderedView, ScoreResult, Submission,
    SubmissionPayload, SubmitOutcome, Verdict, ViewContent, ViewKind, ViewResponse,
};
use crate::time::{Clock, Timestamp, VirtualClock};

/// 2025-01-01T00:00:00Z, the start of every simulated participant's clock.
pub const SIM_EPOCH_MS: i64 = 1_735_689_600_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    AlwaysCorrect,
    AlwaysFirst,
}

impl PolicyKind {
    pub const NAMES: [&'static str; 3] = ["random", "always_correct", "always_first"];

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Self::Random),
            "always_correct" => Some(Self::AlwaysCorrect),
            "always_first" => Some(Self::AlwaysFirst),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::AlwaysCorrect => "always_correct",
            PolicyKind::AlwaysFirst => "always_first",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimulationConfig {
    pub n: usize,
    pub policy: PolicyKind,
    pub seed: u64,
    /// Virtual time each participant spends on every view before answering.
    pub answer_delay_ms: u64,
    pub engine: EngineConfig,
}

impl SimulationConfig {
    pub fn new(n: usize, policy: PolicyKind, seed: u64) -> Self {
        Self {
            n,
            policy,
            seed,
            answer_delay_ms: 1000,
            engine: EngineConfig::default(),
        }
    }
}

pub fn participant_login(index: usize) -> String {
    format!("sim-{index:04}")
}

pub fn participant_access_code(index: usize) -> String {
    format!("sim-code-{index:04}")
}

pub fn participant_rng(seed: u64, index: usize) -> SplitMix64 {
    SplitMix64::new(fnv1a64(format!("{seed}|{index}").as_bytes()))
}

/// The participant-side surface of the platform. Implemented in process
/// here and over HTTP by the integration tests.
pub trait ParticipantApi {
    fn login(&mut self, login: &str, access_code: &str) -> Result<LoginOutcome, String>;
    fn view(&mut self, token: &str) -> Result<ViewResponse, String>;
    /// `Ok(None)` when the server discarded the answer as too late.
    fn submit(&mut self, token: &str, sub: &Submission) -> Result<Option<SubmitOutcome>, String>;
    /// Lets `ms` milliseconds pass.
    fn wait(&mut self, ms: u64);
}

/// Drives a [`Platform`] directly on a virtual clock.
pub struct InProcess<'a> {
    pub platform: &'a Platform,
    pub clock: VirtualClock,
}

impl<'a> InProcess<'a> {
    pub fn new(platform: &'a Platform) -> Self {
        Self {
            platform,
            clock: VirtualClock::starting_at(Timestamp::from_millis(SIM_EPOCH_MS)),
        }
    }
}

impl ParticipantApi for InProcess<'_> {
    fn login(&mut self, login: &str, access_code: &str) -> Result<LoginOutcome, String> {
        self.platform
            .login(login, access_code, self.clock.now())
            .map_err(|e| e.to_string())
    }

    fn view(&mut self, token: &str) -> Result<ViewResponse, String> {
        self.platform.current_view(token, self.clock.now()).map_err(|e| e.to_string())
    }

    fn submit(&mut self, token: &str, sub: &Submission) -> Result<Option<SubmitOutcome>, String> {
        match self.platform.submit(token, sub, self.clock.now()) {
            Ok(out) => Ok(Some(out)),
            Err(PlatformError::Engine(EngineError::TimedOut { .. })) => Ok(None),
            Err(e) => Err(e.to_string()),
        }
    }

    fn wait(&mut self, ms: u64) {
        self.clock.advance_millis(ms as i64);
    }
}

fn pick<'a>(rng: &mut SplitMix64, items: &'a [String]) -> &'a String {
    &items[rng.below(items.len() as u64) as usize]
}

fn subset(rng: &mut SplitMix64, items: &[String], at_least_one: bool) -> Vec<String> {
    let mut out: Vec<String> = items.iter().filter(|_| rng.next_u64() & 1 == 1).cloned().collect();
    if out.is_empty() && at_least_one {
        out.push(pick(rng, items).clone());
    }
    out
}

fn text_answer(text: &str, max_len: u32) -> String {
    text.chars().take(max_len as usize).collect()
}

fn questionnaire_answer(
    questions: &[RenderedQuestion],
    policy: PolicyKind,
    rng: &mut SplitMix64,
) -> BTreeMap<String, serde_json::Value> {
    use serde_json::json;
    let random = policy == PolicyKind::Random;
    questions
        .iter()
        .map(|q| match q {
            RenderedQuestion::Choice {
                id,
                options,
                exclusive: true,
                ..
            } => {
                let v = if random { pick(rng, options) } else { &options[0] };
                (id.clone(), json!(v))
            }
            RenderedQuestion::Choice {
                id, options, required, ..
            } => {
                let v = if random {
                    subset(rng, options, *required)
                } else {
                    vec![options[0].clone()]
                };
                (id.clone(), json!(v))
            }
            RenderedQuestion::Text { id, max_len, .. } => {
                let text = if random {
                    format!("response {}", rng.below(1000))
                } else {
                    "ok".to_string()
                };
                (id.clone(), json!(text_answer(&text, *max_len)))
            }
            RenderedQuestion::Slider { id, min, max, step, .. } => {
                let steps = ((max - min) / step).round() as u64;
                let k = if random { rng.below(steps + 1) } else { 0 };
                (id.clone(), json!(min + k as f64 * step))
            }
        })
        .collect()
}

/// The answer a synthetic participant gives to `view`.
pub fn choose_payload(
    spec: &ProtocolSpec,
    view: &RenderedView,
    policy: PolicyKind,
    rng: &mut SplitMix64,
) -> SubmissionPayload {
    match &view.content {
        ViewContent::Instruction { .. } | ViewContent::ScoreFeedback { .. } => SubmissionPayload::Ack,
        ViewContent::Questionnaire { questions, .. } => SubmissionPayload::Answers {
            answers: questionnaire_answer(questions, policy, rng),
        },
        ViewContent::InstanceDecision {
            task_id,
            options,
            exclusive,
            ..
        } => {
            let expected = spec
                .task(task_id)
                .and_then(|t| t.instance(&view.view_id))
                .and_then(|i| i.expected.clone());
            let selected = match (policy, expected) {
                (PolicyKind::AlwaysCorrect, Some(expected)) => expected,
                (PolicyKind::Random, _) if *exclusive => vec![pick(rng, options).clone()],
                (PolicyKind::Random, _) => subset(rng, options, false),
                _ => vec![options[0].clone()],
            };
            SubmissionPayload::Decision { selected }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseTrace {
    pub view_id: String,
    pub view_kind: ViewKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    /// "answered" or "timed_out".
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Verdict>,
}

fn view_kind(content: &ViewContent) -> ViewKind {
    match content {
        ViewContent::Instruction { .. } => ViewKind::Instruction,
        ViewContent::Questionnaire { .. } => ViewKind::Questionnaire,
        ViewContent::InstanceDecision { .. } => ViewKind::InstanceDecision,
        ViewContent::ScoreFeedback { .. } => ViewKind::ScoreFeedback,
    }
}

/// Logs in and answers every view until the completion marker, waiting
/// `answer_delay_ms` before each answer. Returns the per-view trace.
pub fn drive_participant(
    api: &mut dyn ParticipantApi,
    spec: &ProtocolSpec,
    login: &str,
    access_code: &str,
    policy: PolicyKind,
    rng: &mut SplitMix64,
    answer_delay_ms: u64,
) -> Result<Vec<ResponseTrace>, String> {
    let token = api.login(login, access_code)?.token;
    let mut trace = Vec::new();
    // Each accepted step advances the cursor, so this bound is never hit by
    // a correct server.
    let budget = 4 * (spec.elements.len() + spec.tasks().map(|(_, t)| t.instances.len() + 1).sum::<usize>()) + 16;
    for _ in 0..budget {
        let view = match api.view(&token)? {
            ViewResponse::Completed { .. } => return Ok(trace),
            ViewResponse::InProgress(v) => *v,
        };
        let payload = choose_payload(spec, &view, policy, rng);
        api.wait(answer_delay_ms);
        let sub = Submission {
            view_id: view.view_id.clone(),
            payload,
            client_elapsed_ms: Some(answer_delay_ms),
        };
        let task_id = match &view.content {
            ViewContent::InstanceDecision { task_id, .. } | ViewContent::ScoreFeedback { task_id, .. } => {
                Some(task_id.clone())
            }
            _ => None,
        };
        let (outcome, feedback) = match api.submit(&token, &sub)? {
            Some(out) => ("answered", out.feedback.map(|f| f.verdict)),
            None => ("timed_out", None),
        };
        trace.push(ResponseTrace {
            view_id: view.view_id,
            view_kind: view_kind(&view.content),
            task_id,
            outcome: outcome.to_string(),
            feedback,
        });
    }
    Err(format!("{login}: no completion after {budget} steps"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantReport {
    pub index: usize,
    pub login: String,
    pub session_id: String,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub events_by_kind: BTreeMap<String, usize>,
    pub task_scores: BTreeMap<String, ScoreResult>,
    /// task id → instance ids in the order this participant saw them.
    pub presented_order: BTreeMap<String, Vec<String>>,
    pub responses: Vec<ResponseTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub protocol_id: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub n: usize,
    pub answer_delay_ms: u64,
    pub grace_ms: i64,
    /// Always "virtual": timestamps in simulated logs are synthetic.
    pub clock: String,
    pub completed: usize,
    pub events_by_kind: BTreeMap<String, usize>,
    pub participants: Vec<ParticipantReport>,
}

impl SimulationReport {
    /// Pretty JSON with a trailing newline; byte-stable across runs.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    pub fn all_completed(&self) -> bool {
        self.completed == self.n
    }
}

pub struct Simulation {
    pub report: SimulationReport,
    /// The in-memory platform the cohort ran against, with its full logs.
    pub platform: Platform,
}

fn participant_report(platform: &Platform, spec: &ProtocolSpec, index: usize, run: Result<Vec<ResponseTrace>, String>) -> ParticipantReport {
    let login = participant_login(index);
    let session_id = session_id_for(&spec.id, &login);
    let mut events_by_kind = BTreeMap::new();
    for e in platform.store().list(&EventFilter::session(&session_id)) {
        *events_by_kind.entry(e.kind.to_string()).or_insert(0) += 1;
    }
    let state = platform.session_state(&login);
    let mut presented_order: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut task_scores = BTreeMap::new();
    if let Some(state) = &state {
        for v in state.sequence.iter().filter(|v| v.kind == ViewKind::InstanceDecision) {
            if let (Some(task), Some(instance)) = (&v.task_id, &v.instance_id) {
                presented_order.entry(task.clone()).or_default().push(instance.clone());
            }
        }
        let engine = Engine::new(spec, platform.store(), platform.config());
        for (_, task) in spec.tasks() {
            if let Ok(score) = engine.compute_task_score(state, &task.id) {
                task_scores.insert(task.id.clone(), score);
            }
        }
    }
    let completed = state.as_ref().is_some_and(|s| s.is_completed() && s.completed_at.is_some());
    let (responses, error) = match run {
        Ok(trace) => (trace, None),
        Err(e) => (Vec::new(), Some(e)),
    };
    ParticipantReport {
        index,
        login,
        session_id,
        completed: completed && error.is_none(),
        error,
        events_by_kind,
        task_scores,
        presented_order,
        responses,
    }
}

/// Runs `config.n` synthetic participants through `spec`.
pub fn simulate(spec: &ProtocolSpec, config: &SimulationConfig) -> Result<Simulation, PlatformError> {
    let platform = Platform::in_memory(vec![spec.clone()], config.engine, PasswordCost::Fast)?;
    let users: Vec<UserImport> = (0..config.n)
        .map(|i| UserImport {
            login: participant_login(i),
            access_code: participant_access_code(i),
            protocol: spec.id.clone(),
        })
        .collect();
    platform.register_users(&users, Timestamp::from_millis(SIM_EPOCH_MS))?;

    let mut participants = Vec::with_capacity(config.n);
    for index in 0..config.n {
        let mut api = InProcess::new(&platform);
        let mut rng = participant_rng(config.seed, index);
        let run = drive_participant(
            &mut api,
            spec,
            &participant_login(index),
            &participant_access_code(index),
            config.policy,
            &mut rng,
            config.answer_delay_ms,
        );
        participants.push(participant_report(&platform, spec, index, run));
    }

    let mut events_by_kind = BTreeMap::new();
    for p in &participants {
        for (k, c) in &p.events_by_kind {
            *events_by_kind.entry(k.clone()).or_insert(0) += c;
        }
    }
    let report = SimulationReport {
        protocol_id: spec.id.clone(),
        policy: config.policy,
        seed: config.seed,
        n: config.n,
        answer_delay_ms: config.answer_delay_ms,
        grace_ms: config.engine.grace_ms,
        clock: "virtual".to_string(),
        completed: participants.iter().filter(|p| p.completed).count(),
        events_by_kind,
        participants,
    };
    Ok(Simulation { report, platform })
}
