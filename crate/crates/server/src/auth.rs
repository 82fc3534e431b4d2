//! Single-credential login, bearer sessions and failed-login throttling.

use std::collections::HashMap;
use std::fmt;
use std::net::IpAddr;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};

pub const USER_ENV: &str = "FAIRYLAND_USER";
pub const PASS_HASH_ENV: &str = "FAIRYLAND_PASS_HASH";
pub const MAX_FAILURES: usize = 5;
pub const FAILURE_WINDOW: Duration = Duration::from_secs(60);
pub const DEFAULT_TOKEN_TTL: Duration = Duration::from_secs(12 * 60 * 60);

/// Username plus the sha256 hex digest of the password.
#[derive(Clone)]
pub struct Credentials {
    pub username: String,
    pub password_sha256: String,
}

impl fmt::Debug for Credentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credentials")
            .field("username", &self.username)
            .field("password_sha256", &"[redacted]")
            .finish()
    }
}

pub fn hash_password(password: &str) -> String {
    hex::encode(Sha256::digest(password.as_bytes()))
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl Credentials {
    pub fn new(username: impl Into<String>, password: &str) -> Self {
        Self {
            username: username.into(),
            password_sha256: hash_password(password),
        }
    }

    /// `None` unless both variables are set.
    pub fn from_env() -> Option<Self> {
        let user = std::env::var(USER_ENV).ok().filter(|v| !v.is_empty())?;
        let hash = std::env::var(PASS_HASH_ENV).ok().filter(|v| !v.is_empty())?;
        Some(Self {
            username: user,
            password_sha256: hash.trim().to_ascii_lowercase(),
        })
    }

    pub fn check(&self, username: &str, password: &str) -> bool {
        let user_ok = constant_time_eq(username.as_bytes(), self.username.as_bytes());
        let pass_ok = constant_time_eq(hash_password(password).as_bytes(), self.password_sha256.as_bytes());
        user_ok & pass_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoginOutcome {
    Granted { token: String, expires_at: DateTime<Utc> },
    Denied,
    Throttled,
}

#[derive(Debug)]
pub struct Sessions {
    credentials: Option<Credentials>,
    ttl: Duration,
    tokens: Mutex<HashMap<String, Instant>>,
    failures: Mutex<HashMap<Option<IpAddr>, Vec<Instant>>>,
}

impl Sessions {
    pub fn new(credentials: Option<Credentials>, ttl: Duration) -> Self {
        Self {
            credentials,
            ttl,
            tokens: Mutex::new(HashMap::new()),
            failures: Mutex::new(HashMap::new()),
        }
    }

    /// Six failures from one source inside a minute: the sixth attempt and
    /// any later one in the window are throttled without checking.
    pub fn login(&self, source: Option<IpAddr>, username: &str, password: &str) -> LoginOutcome {
        let now = Instant::now();
        {
            let mut failures = self.failures.lock().expect("failures lock");
            let recent = failures.entry(source).or_default();
            recent.retain(|t| now.duration_since(*t) < FAILURE_WINDOW);
            if recent.len() >= MAX_FAILURES {
                return LoginOutcome::Throttled;
            }
        }
        let ok = self.credentials.as_ref().is_some_and(|c| c.check(username, password));
        if !ok {
            self.failures.lock().expect("failures lock").entry(source).or_default().push(now);
            return LoginOutcome::Denied;
        }
        let token = hex::encode(rand::random::<[u8; 32]>());
        let expires = now + self.ttl;
        let mut tokens = self.tokens.lock().expect("tokens lock");
        tokens.retain(|_, exp| *exp > now);
        tokens.insert(token.clone(), expires);
        let expires_at = Utc::now() + chrono::Duration::from_std(self.ttl).unwrap_or(chrono::Duration::MAX);
        LoginOutcome::Granted { token, expires_at }
    }

    pub fn is_valid(&self, token: &str) -> bool {
        let tokens = self.tokens.lock().expect("tokens lock");
        tokens.get(token).is_some_and(|exp| *exp > Instant::now())
    }
}
