//! Everything a running deployment needs behind one handle: loaded
//! protocols, the participant registry, the event store and the live
//! sessions. The HTTP layer and the simulator both drive this type, so the
//! two produce the same event logs.
//!
//! Each session sits behind its own mutex, which is the serialization
//! domain for all its mutations. Every operation takes `now` explicitly.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{parse_protocol, serialize_protocol, Diagnostic, ProtocolSpec};
use crate::connection::{ConnectionError, PasswordCost, Registry, UserImport, UserRecord};
use crate::events::{
    export_results, Event, EventFilter, EventKind, EventRefs, EventStore, ExportFormat, JsonlStore, MemoryStore,
    StoreError, AUDIT_STREAM,
};
use crate::session::{
    session_id_for, Engine, EngineConfig, EngineError, SessionState, Submission, SubmitOutcome, ViewResponse,
};
use crate::time::Timestamp;

const UPLOADED_DIR: &str = "protocols";

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error(transparent)]
    Connection(#[from] ConnectionError),
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Users(Vec<ConnectionError>),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("unknown protocol {0:?}")]
    UnknownProtocol(String),
    #[error("protocol {0:?} is already loaded")]
    ProtocolExists(String),
    #[error("protocol is invalid ({} diagnostics)", .0.len())]
    InvalidProtocol(Vec<Diagnostic>),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Storage(String),
}

impl From<crate::session::ReplayError> for PlatformError {
    fn from(e: crate::session::ReplayError) -> Self {
        PlatformError::Engine(EngineError::Replay(e))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginOutcome {
    pub token: String,
    pub protocol_id: String,
    pub resumed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub id: String,
    pub title: String,
    pub sessions: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolStatus {
    pub protocol_id: String,
    pub registered_users: usize,
    pub sessions_in_progress: usize,
    pub sessions_completed: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipantStatus {
    NotStarted,
    InProgress,
    Completed,
}

impl ParticipantStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParticipantStatus::NotStarted => "not_started",
            ParticipantStatus::InProgress => "in_progress",
            ParticipantStatus::Completed => "completed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserListing {
    pub login: String,
    pub protocol_id: String,
    pub status: ParticipantStatus,
}

type SessionHandle = Arc<Mutex<SessionState>>;

pub struct Platform {
    protocols: RwLock<BTreeMap<String, Arc<ProtocolSpec>>>,
    registry: Registry,
    store: Arc<dyn EventStore>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    audit: Mutex<()>,
    config: EngineConfig,
    data_dir: Option<PathBuf>,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform").field("data_dir", &self.data_dir).finish_non_exhaustive()
    }
}

fn storage_err(path: &Path, e: impl std::fmt::Display) -> PlatformError {
    PlatformError::Storage(format!("{}: {e}", path.display()))
}

impl Platform {
    /// A platform with no persistence, used by the simulator and tests.
    pub fn in_memory(protocols: Vec<ProtocolSpec>, config: EngineConfig, cost: PasswordCost) -> Result<Self, PlatformError> {
        let platform = Self {
            protocols: RwLock::default(),
            registry: Registry::in_memory(cost),
            store: Arc::new(MemoryStore::new()),
            sessions: Mutex::default(),
            audit: Mutex::new(()),
            config,
            data_dir: None,
        };
        for p in protocols {
            platform.add_protocol(p)?;
        }
        Ok(platform)
    }

    /// Opens the persistent state under `data_dir`: event logs, registry and
    /// protocols uploaded through the admin API. `protocols` (from the
    /// config directory) take precedence over an uploaded protocol with the
    /// same id. Every session log is replayed, so a corrupt log refuses to
    /// open.
    pub fn open(
        data_dir: &Path,
        protocols: Vec<ProtocolSpec>,
        config: EngineConfig,
        cost: PasswordCost,
    ) -> Result<Self, PlatformError> {
        let store = JsonlStore::open(data_dir)?;
        let registry = Registry::open(data_dir, cost)?;
        let platform = Self {
            protocols: RwLock::default(),
            registry,
            store: Arc::new(store),
            sessions: Mutex::default(),
            audit: Mutex::new(()),
            config,
            data_dir: Some(data_dir.to_path_buf()),
        };
        for p in protocols {
            platform.add_protocol(p)?;
        }
        for spec in Self::read_uploaded(data_dir)? {
            if !platform.has_protocol(&spec.id) {
                platform.add_protocol(spec)?;
            }
        }
        platform.replay_all()?;
        Ok(platform)
    }

    fn read_uploaded(data_dir: &Path) -> Result<Vec<ProtocolSpec>, PlatformError> {
        let dir = data_dir.join(UPLOADED_DIR);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| storage_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut out = Vec::new();
        for path in paths {
            let bytes = fs::read(&path).map_err(|e| storage_err(&path, e))?;
            let parsed = parse_protocol(&bytes).map_err(PlatformError::InvalidProtocol)?;
            out.push(parsed.spec);
        }
        Ok(out)
    }

    fn replay_all(&self) -> Result<(), PlatformError> {
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        for id in self.store.session_ids() {
            let events = self.store.list(&EventFilter::session(&id));
            let state = SessionState::replay(&events)?;
            sessions.insert(id, Arc::new(Mutex::new(state)));
        }
        Ok(())
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    pub fn store(&self) -> &dyn EventStore {
        self.store.as_ref()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn has_protocol(&self, id: &str) -> bool {
        self.protocols.read().expect("protocols poisoned").contains_key(id)
    }

    pub fn protocol(&self, id: &str) -> Option<Arc<ProtocolSpec>> {
        self.protocols.read().expect("protocols poisoned").get(id).cloned()
    }

    pub fn protocol_ids(&self) -> Vec<String> {
        self.protocols.read().expect("protocols poisoned").keys().cloned().collect()
    }

    /// Loads an already validated protocol.
    pub fn add_protocol(&self, spec: ProtocolSpec) -> Result<(), PlatformError> {
        let mut protocols = self.protocols.write().expect("protocols poisoned");
        if protocols.contains_key(&spec.id) {
            return Err(PlatformError::ProtocolExists(spec.id));
        }
        protocols.insert(spec.id.clone(), Arc::new(spec));
        Ok(())
    }

    /// Parses, validates, loads and (when persistent) stores a protocol
    /// document. Returns the protocol id and any warnings.
    pub fn upload_protocol(&self, bytes: &[u8]) -> Result<(String, Vec<Diagnostic>), PlatformError> {
        let parsed = parse_protocol(bytes).map_err(PlatformError::InvalidProtocol)?;
        let id = parsed.spec.id.clone();
        let mut protocols = self.protocols.write().expect("protocols poisoned");
        if protocols.contains_key(&id) {
            return Err(PlatformError::ProtocolExists(id));
        }
        if let Some(data_dir) = &self.data_dir {
            let dir = data_dir.join(UPLOADED_DIR);
            fs::create_dir_all(&dir).map_err(|e| storage_err(&dir, e))?;
            let file = dir.join(format!("{:016x}.json", crate::order::fnv1a64(id.as_bytes())));
            fs::write(&file, serialize_protocol(&parsed.spec)).map_err(|e| storage_err(&file, e))?;
        }
        protocols.insert(id.clone(), Arc::new(parsed.spec));
        Ok((id, parsed.warnings))
    }

    pub fn protocol_summaries(&self) -> Vec<ProtocolSummary> {
        let counts = self.session_counts();
        self.protocols
            .read()
            .expect("protocols poisoned")
            .values()
            .map(|p| {
                let (open, done) = counts.get(&p.id).copied().unwrap_or_default();
                ProtocolSummary {
                    id: p.id.clone(),
                    title: p.title.clone(),
                    sessions: open + done,
                }
            })
            .collect()
    }

    /// protocol id → (in progress, completed).
    fn session_counts(&self) -> BTreeMap<String, (usize, usize)> {
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for handle in self.handles() {
            let s = handle.lock().expect("session poisoned");
            let entry = counts.entry(s.protocol_id.clone()).or_default();
            if s.is_completed() {
                entry.1 += 1;
            } else {
                entry.0 += 1;
            }
        }
        counts
    }

    fn handles(&self) -> Vec<SessionHandle> {
        self.sessions.lock().expect("session map poisoned").values().cloned().collect()
    }

    pub fn status(&self) -> Vec<ProtocolStatus> {
        let counts = self.session_counts();
        let users = self.registry.users();
        self.protocol_ids()
            .into_iter()
            .map(|id| {
                let (open, done) = counts.get(&id).copied().unwrap_or_default();
                ProtocolStatus {
                    registered_users: users.iter().filter(|u| u.protocol_id == id).count(),
                    sessions_in_progress: open,
                    sessions_completed: done,
                    protocol_id: id,
                }
            })
            .collect()
    }

    pub fn register_users(&self, batch: &[UserImport], now: Timestamp) -> Result<Vec<UserRecord>, PlatformError> {
        self.registry
            .register_users(batch, |p| self.has_protocol(p), now)
            .map_err(PlatformError::Users)
    }

    pub fn user_listing(&self) -> Vec<UserListing> {
        self.registry
            .users()
            .into_iter()
            .map(|u| {
                let status = match self.existing_session(&u.protocol_id, &u.login) {
                    None => ParticipantStatus::NotStarted,
                    Some(h) if h.lock().expect("session poisoned").is_completed() => ParticipantStatus::Completed,
                    Some(_) => ParticipantStatus::InProgress,
                };
                UserListing {
                    login: u.login,
                    protocol_id: u.protocol_id,
                    status,
                }
            })
            .collect()
    }

    fn existing_session(&self, protocol_id: &str, login: &str) -> Option<SessionHandle> {
        let sessions = self.sessions.lock().expect("session map poisoned");
        sessions.get(&session_id_for(protocol_id, login)).cloned()
    }

    /// A snapshot of the participant's session state, if it exists.
    pub fn session_state(&self, login: &str) -> Option<SessionState> {
        let user = self.registry.user(login)?;
        let handle = self.existing_session(&user.protocol_id, login)?;
        let state = handle.lock().expect("session poisoned").clone();
        Some(state)
    }

    fn spec_for(&self, user: &UserRecord) -> Result<Arc<ProtocolSpec>, PlatformError> {
        self.protocol(&user.protocol_id)
            .ok_or_else(|| PlatformError::UnknownProtocol(user.protocol_id.clone()))
    }

    /// Finds or starts the user's session. Returns whether it already existed.
    fn session_for(&self, user: &UserRecord, now: Timestamp) -> Result<(SessionHandle, bool), PlatformError> {
        let spec = self.spec_for(user)?;
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        let id = session_id_for(&spec.id, &user.login);
        if let Some(h) = sessions.get(&id) {
            return Ok((Arc::clone(h), true));
        }
        let engine = Engine::new(&spec, self.store.as_ref(), self.config);
        let (state, resumed) = engine.start_session(&user.login, &user.protocol_id, now)?;
        let handle = Arc::new(Mutex::new(state));
        sessions.insert(id, Arc::clone(&handle));
        Ok((handle, resumed))
    }

    fn record_failed_login(&self, login: &str, now: Timestamp) -> Result<(), PlatformError> {
        let _guard = self.audit.lock().expect("audit lock poisoned");
        let event = Event {
            seq: self.store.last_seq(AUDIT_STREAM) + 1,
            session_id: AUDIT_STREAM.to_string(),
            user_login: login.to_string(),
            protocol_id: String::new(),
            kind: EventKind::FailedLogin,
            refs: EventRefs::default(),
            payload: json!({}),
            server_ts: now,
            client_elapsed_ms: None,
        };
        self.store.append(&event)?;
        Ok(())
    }

    /// Checks credentials, starts or resumes the session, logs the login and
    /// issues a fresh token (revoking the previous one).
    pub fn login(&self, login: &str, access_code: &str, now: Timestamp) -> Result<LoginOutcome, PlatformError> {
        let user = match self.registry.check_credentials(login, access_code) {
            Ok(u) => u,
            Err(e) => {
                self.record_failed_login(login, now)?;
                return Err(e.into());
            }
        };
        let spec = self.spec_for(&user)?;
        let (handle, resumed) = self.session_for(&user, now)?;
        {
            let mut state = handle.lock().expect("session poisoned");
            Engine::new(&spec, self.store.as_ref(), self.config).record_login(&mut state, resumed, now)?;
        }
        let issued = self.registry.issue_token(&user.login, now)?;
        Ok(LoginOutcome {
            token: issued.token,
            protocol_id: user.protocol_id,
            resumed,
        })
    }

    fn with_session<T>(
        &self,
        token: &str,
        now: Timestamp,
        f: impl FnOnce(&Engine<'_>, &mut SessionState) -> Result<T, EngineError>,
    ) -> Result<T, PlatformError> {
        let user = self.registry.resolve_token(token, now)?;
        let spec = self.spec_for(&user)?;
        let (handle, _) = self.session_for(&user, now)?;
        let mut state = handle.lock().expect("session poisoned");
        let engine = Engine::new(&spec, self.store.as_ref(), self.config);
        Ok(f(&engine, &mut state)?)
    }

    pub fn current_view(&self, token: &str, now: Timestamp) -> Result<ViewResponse, PlatformError> {
        self.with_session(token, now, |engine, state| engine.current_view(state, now))
    }

    pub fn submit(&self, token: &str, sub: &Submission, now: Timestamp) -> Result<SubmitOutcome, PlatformError> {
        self.with_session(token, now, |engine, state| engine.submit(state, sub, now))
    }

    pub fn notify_timeout(&self, token: &str, view_id: &str, now: Timestamp) -> Result<bool, PlatformError> {
        self.with_session(token, now, |engine, state| engine.notify_timeout(state, view_id, now))
    }

    pub fn export(&self, protocol_id: &str, format: ExportFormat) -> Result<String, PlatformError> {
        if !self.has_protocol(protocol_id) {
            return Err(PlatformError::UnknownProtocol(protocol_id.to_string()));
        }
        Ok(export_results(self.store.as_ref(), protocol_id, format))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_protocol;
    use crate::session::SubmissionPayload;

    fn spec() -> ProtocolSpec {
        let doc = br#"{"id":"p","title":"P","completion":{"message":"Thanks"},"elements":[
            {"kind":"instruction","id":"intro","title":"Hi","body":"Welcome"}]}"#;
        parse_protocol(doc).unwrap().spec
    }

    fn t(ms: i64) -> Timestamp {
        Timestamp::from_millis(1_735_689_600_000 + ms)
    }

    fn platform() -> Platform {
        let p = Platform::in_memory(vec![spec()], EngineConfig::default(), PasswordCost::Fast).unwrap();
        p.registry()
            .register_user("u1", "code", "p", |_| true, t(0))
            .unwrap();
        p
    }

    #[test]
    fn failed_login_goes_to_audit_stream_only() {
        let p = platform();
        assert!(matches!(
            p.login("u1", "nope", t(1)),
            Err(PlatformError::Connection(ConnectionError::BadCredentials))
        ));
        assert!(p.store().session_ids().is_empty());
        let audit = p.store().list(&EventFilter::session(AUDIT_STREAM));
        assert_eq!(audit.len(), 1);
        assert_eq!(audit[0].kind, EventKind::FailedLogin);
    }

    #[test]
    fn login_resume_and_complete() {
        let p = platform();
        let first = p.login("u1", "code", t(1)).unwrap();
        assert!(!first.resumed);
        let second = p.login("u1", "code", t(2)).unwrap();
        assert!(second.resumed);
        assert!(matches!(
            p.current_view(&first.token, t(3)),
            Err(PlatformError::Connection(ConnectionError::InvalidToken))
        ));
        let ViewResponse::InProgress(view) = p.current_view(&second.token, t(3)).unwrap() else {
            panic!("expected a view");
        };
        let sub = Submission {
            view_id: view.view_id,
            payload: SubmissionPayload::Ack,
            client_elapsed_ms: Some(10),
        };
        assert!(p.submit(&second.token, &sub, t(4)).unwrap().advanced);
        assert!(matches!(p.current_view(&second.token, t(5)).unwrap(), ViewResponse::Completed { .. }));
        let kinds: Vec<EventKind> = p.store().list(&EventFilter::protocol("p")).iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::SessionStarted,
                EventKind::Login,
                EventKind::Login,
                EventKind::ViewShown,
                EventKind::InstructionAck,
                EventKind::SessionCompleted
            ]
        );
        assert_eq!(p.status()[0].sessions_completed, 1);
    }

    #[test]
    fn persistent_platform_replays_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let token = {
            let p = Platform::open(dir.path(), vec![spec()], EngineConfig::default(), PasswordCost::Fast).unwrap();
            p.register_users(
                &[UserImport {
                    login: "u1".into(),
                    access_code: "code".into(),
                    protocol: "p".into(),
                }],
                t(0),
            )
            .unwrap();
            let out = p.login("u1", "code", t(1)).unwrap();
            p.current_view(&out.token, t(2)).unwrap();
            out.token
        };
        let p = Platform::open(dir.path(), vec![spec()], EngineConfig::default(), PasswordCost::Fast).unwrap();
        let state = p.session_state("u1").unwrap();
        assert_eq!(state.last_seq, 3);
        assert!(state.sequence[0].shown_at.is_some());
        assert!(matches!(p.current_view(&token, t(3)).unwrap(), ViewResponse::InProgress(_)));
        assert_eq!(p.user_listing()[0].status, ParticipantStatus::InProgress);
    }
}
