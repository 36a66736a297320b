//! Acceptance suite: one section per primary criterion of the case study
//! (fixtures, determinism, event completeness, feedback gating, timer
//! authority, round-trip/replay, HTTP equivalence).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use webxaii_core::config::{
    parse_protocol, serialize_protocol, ExperimentElement, FeedbackPolicy, MediaRef, ProtocolElement, ProtocolSpec,
    QuestionKind,
};
use webxaii_core::events::{EventFilter, EventKind, EventStore, ExportFormat, JsonlStore, CSV_HEADER};
use webxaii_core::platform::LoginOutcome;
use webxaii_core::session::{
    session_id_for, SessionState, Submission, SubmitOutcome, ViewKind, ViewResponse,
};
use webxaii_core::simulate::{
    drive_participant, participant_access_code, participant_login, participant_rng, simulate, ParticipantApi,
    PolicyKind, SimulationConfig,
};

const CONDITIONS: [&str; 4] = ["A", "B", "C", "D"];
const EXPECTED_HEADER: &str = "session_id,user,protocol,experiment_id,task_id,view_id,instance_id,view_kind,event_kind,presented_order_index,payload,correct,server_ts,client_elapsed_ms";

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/case-study")
}

fn fixture_path(condition: &str) -> PathBuf {
    fixtures().join(format!("protocol-{condition}.json"))
}

fn fixture_value(condition: &str) -> Value {
    serde_json::from_slice(&std::fs::read(fixture_path(condition)).unwrap()).unwrap()
}

fn load(condition: &str) -> ProtocolSpec {
    parse_protocol(&std::fs::read(fixture_path(condition)).unwrap()).unwrap().spec
}

fn spec_from(value: &Value) -> ProtocolSpec {
    parse_protocol(value.to_string().as_bytes()).unwrap().spec
}

fn webxaii(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_webxaii"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run webxaii")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Applies `f` to every task object of a protocol document.
fn edit_tasks(doc: &mut Value, f: impl Fn(&mut Value)) {
    for element in doc["elements"].as_array_mut().unwrap() {
        if element["kind"] == "experiment" {
            for child in element["elements"].as_array_mut().unwrap() {
                if child["kind"] == "task" {
                    f(child);
                }
            }
        }
    }
}

/// Protocol A with every task widened to `n` instances (cycling through the
/// original media under new ids).
fn widened_a(n: usize) -> Value {
    let mut doc = fixture_value("A");
    edit_tasks(&mut doc, |task| {
        let base = task["instances"].as_array().unwrap().clone();
        let widened: Vec<Value> = (0..n)
            .map(|k| {
                let mut inst = base[k % base.len()].clone();
                inst["id"] = json!(format!("{}-v{k}", inst["id"].as_str().unwrap()));
                inst
            })
            .collect();
        task["instances"] = Value::Array(widened);
    });
    doc
}

fn count_kinds(events: &[webxaii_core::events::Event]) -> BTreeMap<EventKind, usize> {
    let mut out = BTreeMap::new();
    for e in events {
        *out.entry(e.kind).or_insert(0) += 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Case-study fixtures
// ---------------------------------------------------------------------------

#[test]
fn fixtures_validate_with_zero_errors() {
    let started = Instant::now();
    let assets = fixtures().join("assets");
    for c in CONDITIONS {
        let path = fixture_path(c);
        let out = webxaii(&["validate", path.to_str().unwrap(), "--assets", assets.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "protocol {c}: {}", stdout(&out));
        assert_eq!(stdout(&out), "", "protocol {c} should have no diagnostics at all");
    }
    assert!(started.elapsed() < Duration::from_secs(1), "validation took {:?}", started.elapsed());
}

#[test]
fn fixtures_follow_the_case_study_design() {
    // (AI support shown as prediction or explanation, maze difficulty)
    let conditions = [("A", false, "hard"), ("B", true, "hard"), ("C", false, "easymed"), ("D", true, "easymed")];
    for (c, explanation, difficulty) in conditions {
        let spec = load(c);
        assert_eq!(spec.id, format!("protocol-{c}"));
        let kinds: Vec<&str> = spec
            .elements
            .iter()
            .map(|e| match e {
                ProtocolElement::Instruction(_) => "instruction",
                ProtocolElement::Questionnaire(_) => "questionnaire",
                ProtocolElement::Experiment(_) => "experiment",
            })
            .collect();
        assert_eq!(kinds, ["questionnaire", "experiment", "experiment", "experiment", "questionnaire"], "{c}");

        let tasks: Vec<_> = spec.tasks().map(|(_, t)| t).collect();
        assert_eq!(tasks.len(), 3, "{c}");
        for (k, x) in spec.experiments().enumerate() {
            let shape: Vec<&str> = x
                .elements
                .iter()
                .map(|e| match e {
                    ExperimentElement::Instruction(_) => "instruction",
                    ExperimentElement::Task(_) => "task",
                    ExperimentElement::Questionnaire(_) => "questionnaire",
                    ExperimentElement::ScoreFeedback(_) => "score_feedback",
                })
                .collect();
            assert_eq!(shape, ["instruction", "task"], "{c} experiment {k}");
        }

        for (k, task) in tasks.iter().enumerate() {
            assert!(task.randomize_instances, "{c} {}", task.id);
            let policy = if k < 2 { FeedbackPolicy::CorrectnessOnly } else { FeedbackPolicy::None };
            assert_eq!(task.instance_feedback, policy, "{c} {}", task.id);
            assert_eq!(task.decision.options, ["A", "B", "C", "D"]);
            assert!(task.decision.exclusive);
            for inst in &task.instances {
                match &inst.instance {
                    Some(MediaRef::Image { src, .. }) => {
                        assert!(src.starts_with(&format!("mazes/{difficulty}-")), "{c}: {src}");
                    }
                    other => panic!("{c}: maze instance must be an image, got {other:?}"),
                }
                assert!(inst.expected.as_ref().is_some_and(|e| e.len() == 1));
                // Task 1 is solved without AI support.
                let ai = k > 0;
                assert_eq!(inst.prediction.is_some(), ai, "{c} {} prediction", inst.id);
                let explanations = if ai && explanation { 1 } else { 0 };
                assert_eq!(inst.explanations.len(), explanations, "{c} {} explanations", inst.id);
            }
        }

        let Some(ProtocolElement::Questionnaire(last)) = spec.elements.last() else {
            panic!("{c}: protocol ends with a questionnaire");
        };
        let QuestionKind::Slider { .. } = last.questions[0].kind else {
            panic!("{c}: final questionnaire opens with the trust slider");
        };
    }
}

// ---------------------------------------------------------------------------
// Determinism & randomization
// ---------------------------------------------------------------------------

fn simulate_cli(protocol: &Path, policy: &str, n: usize, seed: u64, out: &Path) -> Vec<u8> {
    let run = webxaii(&[
        "simulate",
        "--protocol",
        protocol.to_str().unwrap(),
        "--n",
        &n.to_string(),
        "--policy",
        policy,
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(stdout(&run), format!("{n}/{n} participants completed\n"));
    std::fs::read(out).unwrap()
}

#[test]
fn simulation_reports_are_byte_identical_and_orders_vary() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let a = fixture_path("A");
    let first = simulate_cli(&a, "random", 100, 7, &dir.path().join("r1.json"));
    let second = simulate_cli(&a, "random", 100, 7, &dir.path().join("r2.json"));
    assert_eq!(first, second, "same invocation must give identical bytes");

    let wide = dir.path().join("protocol-A-wide.json");
    std::fs::write(&wide, serde_json::to_string_pretty(&widened_a(10)).unwrap()).unwrap();
    let run1: Value = serde_json::from_slice(&simulate_cli(&wide, "random", 100, 7, &dir.path().join("w1.json"))).unwrap();
    let run2: Value = serde_json::from_slice(&simulate_cli(&wide, "random", 100, 7, &dir.path().join("w2.json"))).unwrap();
    assert_eq!(run1, run2);

    let p1 = run1["participants"].as_array().unwrap();
    let p2 = run2["participants"].as_array().unwrap();
    assert_eq!(p1.len(), 100);
    for task in ["task1", "task2", "task3"] {
        let distinct: BTreeSet<String> = p1.iter().map(|p| p["presented_order"][task].to_string()).collect();
        assert!(distinct.len() >= 2, "{task}: all 100 participants saw the same order");
        for (x, y) in p1.iter().zip(p2) {
            assert_eq!(x["presented_order"][task].as_array().unwrap().len(), 10);
            assert_eq!(x["presented_order"][task], y["presented_order"][task], "{}", x["login"]);
        }
    }
    assert!(started.elapsed() < Duration::from_secs(10), "took {:?}", started.elapsed());
}

#[test]
fn always_correct_cohort_scores_the_maximum() {
    let report = simulate(&load("A"), &SimulationConfig::new(100, PolicyKind::AlwaysCorrect, 7))
        .unwrap()
        .report;
    assert_eq!(report.completed, 100);
    for p in &report.participants {
        assert_eq!(p.task_scores.len(), 3);
        for (task, s) in &p.task_scores {
            assert_eq!(s.score, s.max, "{} {task}", p.login);
            assert_eq!(s.max, 2.0);
        }
    }
}

// ---------------------------------------------------------------------------
// Event completeness
// ---------------------------------------------------------------------------

#[test]
fn one_completion_logs_every_interaction_once() {
    let started = Instant::now();
    let sim = simulate(&load("A"), &SimulationConfig::new(1, PolicyKind::Random, 7)).unwrap();
    assert!(sim.report.all_completed());
    let session = session_id_for("protocol-A", &participant_login(0));
    let events = sim.platform.store().list(&EventFilter::session(&session));
    let kinds = count_kinds(&events);
    let n = |k: EventKind| kinds.get(&k).copied().unwrap_or(0);
    assert_eq!(n(EventKind::QuestionnaireResponse), 2);
    assert_eq!(n(EventKind::InstructionAck), 3);
    assert_eq!(n(EventKind::Decision) + n(EventKind::Timeout), 6);
    assert_eq!(n(EventKind::SessionStarted), 1);
    assert_eq!(n(EventKind::SessionCompleted), 1);
    assert_eq!(n(EventKind::ViewShown), 11);
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=events.len() as u64).collect::<Vec<_>>());

    let csv_text = sim.platform.export("protocol-A", ExportFormat::Csv).unwrap();
    assert_eq!(CSV_HEADER, EXPECTED_HEADER);
    assert_eq!(csv_text.lines().next().unwrap(), EXPECTED_HEADER);
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 11);
    for row in &rows {
        assert_eq!(row.len(), 14);
        let payload: Value = serde_json::from_str(&row[10]).expect("payload column holds JSON");
        assert!(payload.is_object());
        let correct = &row[11];
        if &row[8] == "decision" {
            assert!(correct == "true" || correct == "false", "decision rows are evaluated");
        } else {
            assert_eq!(correct, "");
        }
    }
    let json_rows: Value = serde_json::from_str(&sim.platform.export("protocol-A", ExportFormat::Json).unwrap()).unwrap();
    assert_eq!(json_rows.as_array().unwrap().len(), rows.len());
    assert!(started.elapsed() < Duration::from_secs(1), "took {:?}", started.elapsed());
}

// ---------------------------------------------------------------------------
// Feedback gating
// ---------------------------------------------------------------------------

#[test]
fn training_tasks_give_feedback_and_the_final_task_does_not() {
    for c in CONDITIONS {
        let sim = simulate(&load(c), &SimulationConfig::new(10, PolicyKind::Random, 7)).unwrap();
        assert!(sim.report.all_completed());
        for p in &sim.report.participants {
            let decisions: Vec<_> = p.responses.iter().filter(|r| r.view_kind == ViewKind::InstanceDecision).collect();
            assert_eq!(decisions.len(), 6);
            for r in decisions {
                assert_eq!(r.outcome, "answered");
                match r.task_id.as_deref() {
                    Some("task1") | Some("task2") => assert!(r.feedback.is_some(), "{c} {} {}", p.login, r.view_id),
                    Some("task3") => assert!(r.feedback.is_none(), "{c} {} {}", p.login, r.view_id),
                    other => panic!("unexpected task {other:?}"),
                }
            }
            // The log keeps the verdict for every task, so final-task
            // accuracy is still exported.
            let events = sim.platform.store().list(&EventFilter::session(&p.session_id).with_kind(EventKind::Decision));
            assert_eq!(events.len(), 6);
            assert!(events.iter().all(|e| e.payload["verdict"].is_string()));
        }
    }
}

// ---------------------------------------------------------------------------
// Timer authority
// ---------------------------------------------------------------------------

fn timed_a(limit_s: f64) -> ProtocolSpec {
    let mut doc = fixture_value("A");
    edit_tasks(&mut doc, |task| task["time_limit_s"] = json!(limit_s));
    spec_from(&doc)
}

#[test]
fn answers_after_the_deadline_become_timeouts_scoring_zero() {
    let spec = timed_a(1.0);
    let mut config = SimulationConfig::new(1, PolicyKind::AlwaysCorrect, 7);
    config.answer_delay_ms = 1500;
    config.engine.grace_ms = 0;
    let sim = simulate(&spec, &config).unwrap();
    let p = &sim.report.participants[0];
    assert!(p.completed);

    let events = sim.platform.store().list(&EventFilter::session(&p.session_id));
    let timeouts: Vec<_> = events.iter().filter(|e| e.kind == EventKind::Timeout).collect();
    assert_eq!(timeouts.len(), 6);
    assert!(events.iter().all(|e| e.kind != EventKind::Decision));
    for t in timeouts {
        assert!(t.refs.instance_id.is_some());
        assert!(t.payload.get("selected").is_none(), "a timeout carries no answer: {}", t.payload);
        assert_eq!(t.payload["late_discarded"], true);
    }
    for (task, s) in &p.task_scores {
        assert_eq!(s.score, 0.0, "{task}");
        assert_eq!(s.max, 2.0, "{task}");
    }
    let decision_traces = p.responses.iter().filter(|r| r.view_kind == ViewKind::InstanceDecision);
    assert!(decision_traces.clone().all(|r| r.outcome == "timed_out" && r.feedback.is_none()));

    // The same answer inside the limit counts.
    config.answer_delay_ms = 900;
    let sim = simulate(&spec, &config).unwrap();
    let p = &sim.report.participants[0];
    assert!(p.task_scores.values().all(|s| s.score == s.max));
}

// ---------------------------------------------------------------------------
// Round-trip & replay
// ---------------------------------------------------------------------------

#[test]
fn protocol_serialization_is_a_fixpoint() {
    for c in CONDITIONS {
        let spec = load(c);
        let text = serialize_protocol(&spec);
        let again = parse_protocol(text.as_bytes()).unwrap();
        assert!(again.warnings.is_empty(), "{c}: {:?}", again.warnings);
        assert_eq!(again.spec, spec, "{c}");
        assert_eq!(serialize_protocol(&again.spec), text, "{c}");
    }
}

#[test]
fn replaying_every_simulated_log_rebuilds_the_session() {
    let mut specs: Vec<ProtocolSpec> = CONDITIONS.iter().map(|c| load(c)).collect();
    specs.push(timed_a(1.0));
    for (k, spec) in specs.iter().enumerate() {
        let mut config = SimulationConfig::new(25, PolicyKind::Random, 7 + k as u64);
        if k == 4 {
            // Mix of answered and timed-out views.
            config.answer_delay_ms = 1000;
            config.engine.grace_ms = 0;
        }
        let sim = simulate(spec, &config).unwrap();
        for p in &sim.report.participants {
            let events = sim.platform.store().list(&EventFilter::session(&p.session_id));
            let rebuilt = SessionState::replay(&events).unwrap();
            let live = sim.platform.session_state(&p.login).unwrap();
            assert_eq!(rebuilt, live, "{} {}", spec.id, p.login);
            assert!(rebuilt.is_completed());
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP equivalence
// ---------------------------------------------------------------------------

struct Server {
    child: Child,
    base: String,
    _stdout: std::io::Lines<BufReader<std::process::ChildStdout>>,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

const ADMIN_TOKEN: &str = "acceptance-admin";

fn start_server(config_dir: &Path, data_dir: &Path) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_webxaii"))
        .args(["serve", "--host", "127.0.0.1", "--port", "0"])
        .arg("--config-dir")
        .arg(config_dir)
        .arg("--data-dir")
        .arg(data_dir)
        .arg("--asset-dir")
        .arg(fixtures().join("assets"))
        .env("WEBXAII_ADMIN_TOKEN", ADMIN_TOKEN)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .expect("spawn server");
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let base = lines
        .by_ref()
        .map(Result::unwrap)
        .find_map(|l| l.strip_prefix("listening on ").map(String::from))
        .expect("bound address");
    Server { child, base, _stdout: lines }
}

/// A participant speaking the public JSON API.
struct HttpParticipant {
    client: reqwest::blocking::Client,
    base: String,
}

impl HttpParticipant {
    fn decode<T: serde::de::DeserializeOwned>(res: reqwest::blocking::Response) -> Result<T, String> {
        let status = res.status();
        if status.is_success() {
            res.json().map_err(|e| e.to_string())
        } else {
            Err(format!("{status}: {}", res.text().unwrap_or_default()))
        }
    }
}

impl ParticipantApi for HttpParticipant {
    fn login(&mut self, login: &str, access_code: &str) -> Result<LoginOutcome, String> {
        let res = self
            .client
            .post(format!("{}/api/login", self.base))
            .json(&json!({"login": login, "access_code": access_code}))
            .send()
            .map_err(|e| e.to_string())?;
        Self::decode(res)
    }

    fn view(&mut self, token: &str) -> Result<ViewResponse, String> {
        let res = self
            .client
            .get(format!("{}/api/session/view", self.base))
            .bearer_auth(token)
            .send()
            .map_err(|e| e.to_string())?;
        Self::decode(res)
    }

    fn submit(&mut self, token: &str, sub: &Submission) -> Result<Option<SubmitOutcome>, String> {
        let res = self
            .client
            .post(format!("{}/api/session/submit", self.base))
            .bearer_auth(token)
            .json(sub)
            .send()
            .map_err(|e| e.to_string())?;
        if res.status() == reqwest::StatusCode::GONE {
            return Ok(None);
        }
        Self::decode(res).map(Some)
    }

    fn wait(&mut self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Events with wall-clock artefacts removed: timestamps are dropped and a
/// deadline is reduced to whether one was set.
fn normalized(events: &[webxaii_core::events::Event]) -> Vec<Value> {
    events
        .iter()
        .map(|e| {
            let mut v = serde_json::to_value(e).unwrap();
            v.as_object_mut().unwrap().remove("server_ts");
            if let Some(deadline) = v["payload"].get_mut("deadline") {
                *deadline = json!(!deadline.is_null());
            }
            v
        })
        .collect()
}

#[test]
fn http_participant_matches_in_process_simulation() {
    let started = Instant::now();
    let spec = load("A");
    let config_dir = tempfile::tempdir().unwrap();
    let data_dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture_path("A"), config_dir.path().join("protocol-A.json")).unwrap();

    let server = start_server(config_dir.path(), data_dir.path());
    let client = reqwest::blocking::Client::new();
    let login = participant_login(0);
    let code = participant_access_code(0);
    let res = client
        .post(format!("{}/api/admin/users", server.base))
        .header("x-admin-token", ADMIN_TOKEN)
        .json(&json!([{"login": login, "access_code": code, "protocol": "protocol-A"}]))
        .send()
        .unwrap();
    assert_eq!(res.status(), reqwest::StatusCode::OK);

    let seed = 7;
    let mut http = HttpParticipant {
        client,
        base: server.base.clone(),
    };
    let mut rng = participant_rng(seed, 0);
    let trace = drive_participant(&mut http, &spec, &login, &code, PolicyKind::Random, &mut rng, 0).unwrap();
    drop(server);

    let mut config = SimulationConfig::new(1, PolicyKind::Random, seed);
    config.answer_delay_ms = 0;
    let sim = simulate(&spec, &config).unwrap();
    assert_eq!(trace, sim.report.participants[0].responses);

    let session = session_id_for("protocol-A", &login);
    let over_http = JsonlStore::open(data_dir.path()).unwrap().list(&EventFilter::session(&session));
    let in_process = sim.platform.store().list(&EventFilter::session(&session));
    assert!(!over_http.is_empty());
    assert_eq!(normalized(&over_http), normalized(&in_process));
    assert!(started.elapsed() < Duration::from_secs(5), "took {:?}", started.elapsed());
}
