//! Participant registry, credential checks and bearer tokens.
//!
//! Access codes are stored only as Argon2id PHC strings. Tokens are 256-bit
//! random values handed to the client once; the registry keeps only their
//! SHA-256 digest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::time::Timestamp;

/// Default token lifetime: 24 hours.
pub const TOKEN_TTL_MS: i64 = 24 * 60 * 60 * 1000;

const USERS_FILE: &str = "users.json";
const TOKENS_FILE: &str = "tokens.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub login: String,
    /// Argon2id PHC string; never the plain access code.
    pub access_hash: String,
    pub protocol_id: String,
    pub created_at: Timestamp,
}

/// One entry of a provisioning file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserImport {
    pub login: String,
    pub access_code: String,
    pub protocol: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub login: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
}

/// A freshly issued token. The plain value exists only here.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IssuedToken {
    pub token: String,
    pub record: TokenRecord,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConnectionError {
    #[error("login {0:?} is already registered")]
    DuplicateLogin(String),
    #[error("login {login:?} is assigned to unknown protocol {protocol:?}")]
    UnknownProtocol { login: String, protocol: String },
    #[error("login {0:?} is not usable (empty or contains control characters)")]
    InvalidLogin(String),
    #[error("access code for {0:?} must be non-empty")]
    EmptyAccessCode(String),
    #[error("bad credentials")]
    BadCredentials,
    #[error("invalid token")]
    InvalidToken,
    #[error("token expired")]
    ExpiredToken,
    #[error("registry storage failure: {0}")]
    Storage(String),
}

/// Argon2 work factor. `Fast` exists for simulations and tests where many
/// synthetic users are provisioned; it is still a salted Argon2id hash.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PasswordCost {
    #[default]
    Standard,
    Fast,
}

impl PasswordCost {
    fn hasher(self) -> Argon2<'static> {
        let params = match self {
            PasswordCost::Standard => Params::default(),
            PasswordCost::Fast => Params::new(Params::MIN_M_COST, 1, 1, None).expect("valid argon2 params"),
        };
        Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
    }
}

fn random_bytes<const N: usize>() -> [u8; N] {
    let mut buf = [0u8; N];
    getrandom::fill(&mut buf).expect("operating system random source");
    buf
}

fn hash_code(cost: PasswordCost, code: &str) -> String {
    let salt = SaltString::encode_b64(&random_bytes::<16>()).expect("16-byte salt encodes");
    cost.hasher()
        .hash_password(code.as_bytes(), &salt)
        .expect("argon2 hashing")
        .to_string()
}

fn verify_code(code: &str, phc: &str) -> bool {
    // The parameters are read back from the PHC string, so hashes made at
    // either cost verify.
    PasswordHash::new(phc).is_ok_and(|parsed| Argon2::default().verify_password(code.as_bytes(), &parsed).is_ok())
}

fn token_digest(token: &str) -> String {
    let digest = Sha256::digest(token.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ConnectionError> {
    let storage = |e: std::io::Error| ConnectionError::Storage(format!("{}: {e}", path.display()));
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp).map_err(storage)?;
    f.write_all(bytes).map_err(storage)?;
    f.sync_data().map_err(storage)?;
    fs::rename(&tmp, path).map_err(storage)
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: &Path) -> Result<T, ConnectionError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map_err(|e| ConnectionError::Storage(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(T::default()),
        Err(e) => Err(ConnectionError::Storage(format!("{}: {e}", path.display()))),
    }
}

pub struct Registry {
    dir: Option<PathBuf>,
    cost: PasswordCost,
    users: RwLock<BTreeMap<String, UserRecord>>,
    /// Token digest → record. At most one entry per login.
    tokens: Mutex<BTreeMap<String, TokenRecord>>,
    /// Verified against when the login is unknown, so both failure paths do
    /// the same work.
    dummy_hash: String,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl Registry {
    /// A registry that lives only in memory.
    pub fn in_memory(cost: PasswordCost) -> Self {
        Self {
            dir: None,
            cost,
            users: RwLock::default(),
            tokens: Mutex::default(),
            dummy_hash: hash_code(cost, "unused dummy access code"),
        }
    }

    /// Loads (or starts) the registry persisted under `data_dir`.
    pub fn open(data_dir: &Path, cost: PasswordCost) -> Result<Self, ConnectionError> {
        fs::create_dir_all(data_dir).map_err(|e| ConnectionError::Storage(format!("{}: {e}", data_dir.display())))?;
        let users: Vec<UserRecord> = read_json(&data_dir.join(USERS_FILE))?;
        let tokens: BTreeMap<String, TokenRecord> = read_json(&data_dir.join(TOKENS_FILE))?;
        let reg = Self::in_memory(cost);
        *reg.users.write().expect("registry poisoned") = users.into_iter().map(|u| (u.login.clone(), u)).collect();
        *reg.tokens.lock().expect("token table poisoned") = tokens;
        Ok(Self {
            dir: Some(data_dir.to_path_buf()),
            ..reg
        })
    }

    fn save_users(&self, users: &BTreeMap<String, UserRecord>) -> Result<(), ConnectionError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let list: Vec<&UserRecord> = users.values().collect();
        let mut json = serde_json::to_vec_pretty(&list).expect("users serialize");
        json.push(b'\n');
        write_atomic(&dir.join(USERS_FILE), &json)
    }

    fn save_tokens(&self, tokens: &BTreeMap<String, TokenRecord>) -> Result<(), ConnectionError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut json = serde_json::to_vec_pretty(tokens).expect("tokens serialize");
        json.push(b'\n');
        write_atomic(&dir.join(TOKENS_FILE), &json)
    }

    /// Registers a batch of users. The batch is all-or-nothing: every
    /// problem is reported and nothing is stored unless all entries are
    /// acceptable.
    pub fn register_users(
        &self,
        batch: &[UserImport],
        protocol_known: impl Fn(&str) -> bool,
        now: Timestamp,
    ) -> Result<Vec<UserRecord>, Vec<ConnectionError>> {
        let mut users = self.users.write().expect("registry poisoned");
        let mut errors = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for u in batch {
            if u.login.trim().is_empty() || u.login.chars().any(char::is_control) {
                errors.push(ConnectionError::InvalidLogin(u.login.clone()));
            } else if users.contains_key(&u.login) || !seen.insert(u.login.as_str()) {
                errors.push(ConnectionError::DuplicateLogin(u.login.clone()));
            } else if !protocol_known(&u.protocol) {
                errors.push(ConnectionError::UnknownProtocol {
                    login: u.login.clone(),
                    protocol: u.protocol.clone(),
                });
            } else if u.access_code.is_empty() {
                errors.push(ConnectionError::EmptyAccessCode(u.login.clone()));
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        let records: Vec<UserRecord> = batch
            .iter()
            .map(|u| UserRecord {
                login: u.login.clone(),
                access_hash: hash_code(self.cost, &u.access_code),
                protocol_id: u.protocol.clone(),
                created_at: now,
            })
            .collect();
        let mut next = users.clone();
        next.extend(records.iter().map(|r| (r.login.clone(), r.clone())));
        self.save_users(&next).map_err(|e| vec![e])?;
        *users = next;
        Ok(records)
    }

    pub fn register_user(
        &self,
        login: &str,
        access_code: &str,
        protocol_id: &str,
        protocol_known: impl Fn(&str) -> bool,
        now: Timestamp,
    ) -> Result<UserRecord, ConnectionError> {
        let batch = [UserImport {
            login: login.into(),
            access_code: access_code.into(),
            protocol: protocol_id.into(),
        }];
        self.register_users(&batch, protocol_known, now)
            .map(|mut v| v.remove(0))
            .map_err(|mut e| e.remove(0))
    }

    pub fn user(&self, login: &str) -> Option<UserRecord> {
        self.users.read().expect("registry poisoned").get(login).cloned()
    }

    pub fn users(&self) -> Vec<UserRecord> {
        self.users.read().expect("registry poisoned").values().cloned().collect()
    }

    /// Checks a login/access-code pair. Unknown logins and wrong codes fail
    /// identically and take the same hashing work.
    pub fn check_credentials(&self, login: &str, access_code: &str) -> Result<UserRecord, ConnectionError> {
        let user = self.user(login);
        let phc = user.as_ref().map_or(self.dummy_hash.as_str(), |u| u.access_hash.as_str());
        let ok = verify_code(access_code, phc);
        match user {
            Some(u) if ok => Ok(u),
            _ => Err(ConnectionError::BadCredentials),
        }
    }

    /// Issues a new token for `login`, revoking any earlier one.
    pub fn issue_token(&self, login: &str, now: Timestamp) -> Result<IssuedToken, ConnectionError> {
        let token = URL_SAFE_NO_PAD.encode(random_bytes::<32>());
        let record = TokenRecord {
            login: login.to_string(),
            issued_at: now,
            expires_at: now.plus_millis(TOKEN_TTL_MS),
        };
        let mut tokens = self.tokens.lock().expect("token table poisoned");
        let mut next = tokens.clone();
        next.retain(|_, r| r.login != login);
        next.insert(token_digest(&token), record.clone());
        self.save_tokens(&next)?;
        *tokens = next;
        Ok(IssuedToken { token, record })
    }

    pub fn resolve_token(&self, token: &str, now: Timestamp) -> Result<UserRecord, ConnectionError> {
        let record = {
            let tokens = self.tokens.lock().expect("token table poisoned");
            tokens.get(&token_digest(token)).cloned()
        };
        let record = record.ok_or(ConnectionError::InvalidToken)?;
        if now >= record.expires_at {
            return Err(ConnectionError::ExpiredToken);
        }
        self.user(&record.login).ok_or(ConnectionError::InvalidToken)
    }
}
