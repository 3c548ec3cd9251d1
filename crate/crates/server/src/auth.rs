//! Accounts, password hashing, session tokens and login throttling.
//!
//! Credentials are stored as `pbkdf2-sha256$<iterations>$<salt>$<hash>`
//! with unpadded standard base64 salt and hash.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::{STANDARD_NO_PAD, URL_SAFE_NO_PAD};
use base64::Engine;
use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

pub const PBKDF2_ITERATIONS: u32 = 100_000;
pub const SALT_LEN: usize = 16;
const HASH_LEN: usize = 32;
const TOKEN_BYTES: usize = 32;
pub const MIN_PASSWORD_LEN: usize = 10;
pub const MAX_LOGIN_FAILURES: usize = 10;
pub const FAILURE_WINDOW: Duration = Duration::from_secs(60);
const SCHEME: &str = "pbkdf2-sha256";

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("user {0} already exists")]
    Duplicate(String),
    #[error("{0}")]
    WeakPassword(String),
    #[error("{0}")]
    InvalidUsername(String),
    #[error("malformed credential: {0}")]
    MalformedCredential(String),
    #[error("user store {}: {message}", path.display())]
    Store { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Admin,
    Normal,
}

pub fn check_username(name: &str) -> Result<(), AuthError> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
    if ok {
        Ok(())
    } else {
        Err(AuthError::InvalidUsername(
            "usernames are 1-64 characters of letters, digits, '.', '_' or '-'".into(),
        ))
    }
}

pub fn check_password_policy(password: &str) -> Result<(), AuthError> {
    if password.chars().count() < MIN_PASSWORD_LEN {
        return Err(AuthError::WeakPassword(format!(
            "password must have at least {MIN_PASSWORD_LEN} characters"
        )));
    }
    Ok(())
}

/// Salted PBKDF2-HMAC-SHA256 digest with its parameters.
#[derive(Clone, PartialEq, Eq)]
pub struct PasswordHash {
    iterations: u32,
    salt: Vec<u8>,
    hash: Vec<u8>,
}

impl std::fmt::Debug for PasswordHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PasswordHash").field("iterations", &self.iterations).finish_non_exhaustive()
    }
}

impl PasswordHash {
    pub fn derive(password: &str) -> PasswordHash {
        let mut salt = vec![0u8; SALT_LEN];
        rand::rng().fill_bytes(&mut salt);
        PasswordHash::with_salt(password, salt, PBKDF2_ITERATIONS)
    }

    pub fn with_salt(password: &str, salt: Vec<u8>, iterations: u32) -> PasswordHash {
        let hash = derive_key(password, &salt, iterations);
        PasswordHash { iterations, salt, hash }
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn verify(&self, password: &str) -> bool {
        let candidate = derive_key(password, &self.salt, self.iterations);
        candidate.ct_eq(&self.hash).into()
    }

    pub fn encode(&self) -> String {
        format!(
            "{SCHEME}${}${}${}",
            self.iterations,
            STANDARD_NO_PAD.encode(&self.salt),
            STANDARD_NO_PAD.encode(&self.hash)
        )
    }

    pub fn decode(s: &str) -> Result<PasswordHash, AuthError> {
        let bad = |m: &str| AuthError::MalformedCredential(m.to_string());
        let parts: Vec<&str> = s.split('$').collect();
        let [scheme, iterations, salt, hash] = parts[..] else {
            return Err(bad("expected four '$'-separated fields"));
        };
        if scheme != SCHEME {
            return Err(bad("unknown scheme"));
        }
        Ok(PasswordHash {
            iterations: iterations.parse().map_err(|_| bad("iterations"))?,
            salt: STANDARD_NO_PAD.decode(salt).map_err(|_| bad("salt"))?,
            hash: STANDARD_NO_PAD.decode(hash).map_err(|_| bad("hash"))?,
        })
    }
}

fn derive_key(password: &str, salt: &[u8], iterations: u32) -> Vec<u8> {
    let mut out = vec![0u8; HASH_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut out);
    out
}

/// Public view of an account.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserInfo {
    pub username: String,
    pub role: Role,
}

#[derive(Serialize, Deserialize)]
struct StoredUser {
    username: String,
    role: Role,
    credential: String,
}

/// Account table, optionally persisted as JSON.
pub struct Users {
    accounts: RwLock<BTreeMap<String, (Role, PasswordHash)>>,
    path: Option<PathBuf>,
    // verified against for unknown usernames so they cost the same
    decoy: PasswordHash,
}

impl Users {
    pub fn open(path: Option<PathBuf>) -> Result<Users, AuthError> {
        let store_err = |path: &PathBuf, message: String| AuthError::Store {
            path: path.clone(),
            message,
        };
        let mut accounts = BTreeMap::new();
        if let Some(p) = &path {
            match std::fs::read(p) {
                Ok(bytes) => {
                    let stored: Vec<StoredUser> =
                        serde_json::from_slice(&bytes).map_err(|e| store_err(p, e.to_string()))?;
                    for u in stored {
                        accounts.insert(u.username, (u.role, PasswordHash::decode(&u.credential)?));
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(store_err(p, e.to_string())),
            }
        }
        Ok(Users {
            accounts: RwLock::new(accounts),
            path,
            decoy: PasswordHash::derive("decoy password"),
        })
    }

    pub fn len(&self) -> usize {
        self.accounts.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, username: &str) -> Option<UserInfo> {
        let accounts = self.accounts.read().unwrap_or_else(|e| e.into_inner());
        accounts.get(username).map(|(role, _)| UserInfo {
            username: username.to_string(),
            role: *role,
        })
    }

    pub fn create(&self, username: &str, password: &str, role: Role) -> Result<UserInfo, AuthError> {
        check_username(username)?;
        check_password_policy(password)?;
        if self.get(username).is_some() {
            return Err(AuthError::Duplicate(username.to_string()));
        }
        let hash = PasswordHash::derive(password);
        let mut accounts = self.accounts.write().unwrap_or_else(|e| e.into_inner());
        if accounts.contains_key(username) {
            return Err(AuthError::Duplicate(username.to_string()));
        }
        accounts.insert(username.to_string(), (role, hash));
        if let Err(e) = self.persist(&accounts) {
            accounts.remove(username);
            return Err(e);
        }
        Ok(UserInfo {
            username: username.to_string(),
            role,
        })
    }

    fn persist(&self, accounts: &BTreeMap<String, (Role, PasswordHash)>) -> Result<(), AuthError> {
        let Some(path) = &self.path else { return Ok(()) };
        let stored: Vec<StoredUser> = accounts
            .iter()
            .map(|(name, (role, hash))| StoredUser {
                username: name.clone(),
                role: *role,
                credential: hash.encode(),
            })
            .collect();
        let err = |e: std::io::Error| AuthError::Store {
            path: path.clone(),
            message: e.to_string(),
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&stored).expect("users serialize")).map_err(err)?;
        std::fs::rename(&tmp, path).map_err(err)
    }

    /// Checks a password. Unknown users pay the same hashing cost as known
    /// ones.
    pub fn authenticate(&self, username: &str, password: &str) -> Option<UserInfo> {
        let found = {
            let accounts = self.accounts.read().unwrap_or_else(|e| e.into_inner());
            accounts.get(username).cloned()
        };
        match found {
            Some((role, hash)) => hash.verify(password).then(|| UserInfo {
                username: username.to_string(),
                role,
            }),
            None => {
                let _ = self.decoy.verify(password);
                None
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user: UserInfo,
    pub expires_at: DateTime<Utc>,
}

pub struct Sessions {
    tokens: Mutex<HashMap<String, Session>>,
    lifetime: chrono::Duration,
}

impl Sessions {
    pub fn new(lifetime: Duration) -> Sessions {
        Sessions {
            tokens: Mutex::new(HashMap::new()),
            lifetime: chrono::Duration::from_std(lifetime).unwrap_or(chrono::Duration::MAX),
        }
    }

    pub fn issue(&self, user: &UserInfo) -> (String, DateTime<Utc>) {
        self.issue_with_lifetime(user, self.lifetime)
    }

    /// Issues a token valid for `lifetime`, which may be negative.
    pub fn issue_with_lifetime(&self, user: &UserInfo, lifetime: chrono::Duration) -> (String, DateTime<Utc>) {
        let mut raw = [0u8; TOKEN_BYTES];
        rand::rng().fill_bytes(&mut raw);
        let token = URL_SAFE_NO_PAD.encode(raw);
        let expires_at = Utc::now() + lifetime;
        let session = Session {
            user: user.clone(),
            expires_at,
        };
        self.lock().insert(token.clone(), session);
        (token, expires_at)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Session>> {
        self.tokens.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// The live session for `token`. Expired sessions are dropped.
    pub fn lookup(&self, token: &str) -> Option<Session> {
        let mut tokens = self.lock();
        match tokens.get(token) {
            Some(s) if s.expires_at > Utc::now() => Some(s.clone()),
            Some(_) => {
                tokens.remove(token);
                None
            }
            None => None,
        }
    }

    pub fn active(&self) -> usize {
        let now = Utc::now();
        let mut tokens = self.lock();
        tokens.retain(|_, s| s.expires_at > now);
        tokens.len()
    }
}

/// Per-username failure counter. A username with [`MAX_LOGIN_FAILURES`]
/// failures inside [`FAILURE_WINDOW`] is refused until the oldest one ages
/// out; a success clears the count.
pub struct LoginThrottle {
    failures: Mutex<HashMap<String, VecDeque<Instant>>>,
}

impl Default for LoginThrottle {
    fn default() -> Self {
        LoginThrottle {
            failures: Mutex::new(HashMap::new()),
        }
    }
}

impl LoginThrottle {
    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, VecDeque<Instant>>> {
        self.failures.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn is_blocked(&self, username: &str, now: Instant) -> bool {
        let mut failures = self.lock();
        let Some(q) = failures.get_mut(username) else { return false };
        while q.front().is_some_and(|&t| now.duration_since(t) >= FAILURE_WINDOW) {
            q.pop_front();
        }
        if q.is_empty() {
            failures.remove(username);
            return false;
        }
        q.len() >= MAX_LOGIN_FAILURES
    }

    pub fn record_failure(&self, username: &str, now: Instant) {
        self.lock().entry(username.to_string()).or_default().push_back(now);
    }

    pub fn reset(&self, username: &str) {
        self.lock().remove(username);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_hash(pw: &str) -> PasswordHash {
        PasswordHash::with_salt(pw, vec![7; SALT_LEN], 1000)
    }

    #[test]
    fn encode_decode_verify() {
        let h = fast_hash("correct horse");
        let text = h.encode();
        assert!(text.starts_with("pbkdf2-sha256$1000$"));
        let back = PasswordHash::decode(&text).unwrap();
        assert_eq!(back, h);
        assert!(back.verify("correct horse"));
        assert!(!back.verify("correct horsf"));
        assert!(PasswordHash::decode("md5$1$a$b").is_err());
    }

    #[test]
    fn known_pbkdf2_vector() {
        // RFC 7914 section 11, PBKDF2-HMAC-SHA256 with 1 iteration
        let h = PasswordHash::with_salt("passwd", b"salt".to_vec(), 1);
        let expected = [
            0x55, 0xac, 0x04, 0x6e, 0x56, 0xe3, 0x08, 0x9f, 0xec, 0x16, 0x91, 0xc2, 0x25, 0x44, 0xb6, 0x05,
            0xf9, 0x41, 0x85, 0x21, 0x6d, 0xde, 0x04, 0x65, 0xe6, 0x8b, 0x9d, 0x57, 0xc2, 0x0d, 0xac, 0xbc,
        ];
        assert_eq!(h.hash, expected);
    }

    #[test]
    fn default_hash_parameters() {
        let h = PasswordHash::derive("0123456789");
        assert_eq!(h.iterations(), PBKDF2_ITERATIONS);
        assert_eq!(h.salt.len(), 16);
        assert_ne!(PasswordHash::derive("0123456789").salt, h.salt);
    }

    #[test]
    fn users_create_and_persist() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("users.json");
        let users = Users::open(Some(path.clone())).unwrap();
        users.create("alice", "0123456789", Role::Normal).unwrap();
        assert!(matches!(users.create("alice", "0123456789", Role::Normal), Err(AuthError::Duplicate(_))));
        assert!(matches!(users.create("bob", "short", Role::Normal), Err(AuthError::WeakPassword(_))));
        assert!(matches!(users.create("bad name", "0123456789", Role::Normal), Err(AuthError::InvalidUsername(_))));

        let reopened = Users::open(Some(path)).unwrap();
        assert_eq!(reopened.authenticate("alice", "0123456789").unwrap().role, Role::Normal);
        assert!(reopened.authenticate("alice", "0123456780").is_none());
        assert!(reopened.authenticate("nobody", "0123456789").is_none());
    }

    #[test]
    fn sessions_expire() {
        let sessions = Sessions::new(Duration::from_secs(60));
        let user = UserInfo {
            username: "u".into(),
            role: Role::Normal,
        };
        let (live, _) = sessions.issue(&user);
        let (dead, _) = sessions.issue_with_lifetime(&user, chrono::Duration::seconds(-1));
        assert_eq!(live.len(), 43);
        assert!(live.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_'));
        assert_eq!(sessions.lookup(&live).unwrap().user, user);
        assert!(sessions.lookup(&dead).is_none());
        assert!(sessions.lookup("nope").is_none());
        assert_eq!(sessions.active(), 1);
    }

    #[test]
    fn throttle_blocks_after_ten_failures() {
        let t = LoginThrottle::default();
        let start = Instant::now();
        for _ in 0..MAX_LOGIN_FAILURES {
            assert!(!t.is_blocked("u", start));
            t.record_failure("u", start);
        }
        assert!(t.is_blocked("u", start));
        assert!(!t.is_blocked("v", start));
        assert!(!t.is_blocked("u", start + FAILURE_WINDOW));
        t.record_failure("u", start);
        t.reset("u");
        assert!(!t.is_blocked("u", start));
    }
}
