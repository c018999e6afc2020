//! Privileged credential vault: sealed storage, MFA-gated retrieval,
//! automated rotation, and privileged session recording.
//!
//! Every operation is authorized by the policy engine under module
//! `vault`. Environments are enforced through grant tags: a credential in
//! PROD is reachable only through a grant tagged `prod`, and likewise for
//! `test` and `dev`.

use std::collections::HashMap;
use std::sync::Arc;
use std::thread::JoinHandle;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use chrono::{DateTime, Duration, Utc};
use crossbeam_channel::{bounded, RecvTimeoutError, Sender};
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use zeroize::{Zeroize, Zeroizing};

use crate::audit::AuditLog;
use crate::clock::SharedClock;
use crate::model::{new_id, Id};
use crate::policy::{AccessRequest, Decision, PolicyEngine, ReasonCode};
use crate::store::{Store, StoreError};
use crate::validate::Field;

pub const VAULT_MODULE: &str = "vault";
pub const MFA_PROOF_MAX_AGE_SECS: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CredentialKind {
    SshKey,
    Ldap,
    AccessKey,
    PrivilegedPassword,
    ApiKey,
    SecretKey,
    ServiceAccountPassword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Audience {
    Ciam,
    Pam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Environment {
    Prod,
    Test,
    Dev,
}

impl Environment {
    /// Grant tag that scopes access to this environment.
    pub fn tag(self) -> &'static str {
        match self {
            Environment::Prod => "prod",
            Environment::Test => "test",
            Environment::Dev => "dev",
        }
    }
}

macro_rules! parse_upper {
    ($t:ty, $($name:literal => $v:expr),+ $(,)?) => {
        impl std::str::FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_uppercase().replace('-', "_").as_str() {
                    $($name => Ok($v),)+
                    other => Err(format!("unknown value {other}")),
                }
            }
        }
    };
}

parse_upper!(CredentialKind,
    "SSH_KEY" => CredentialKind::SshKey,
    "LDAP" => CredentialKind::Ldap,
    "ACCESS_KEY" => CredentialKind::AccessKey,
    "PRIVILEGED_PASSWORD" => CredentialKind::PrivilegedPassword,
    "API_KEY" => CredentialKind::ApiKey,
    "SECRET_KEY" => CredentialKind::SecretKey,
    "SERVICE_ACCOUNT_PASSWORD" => CredentialKind::ServiceAccountPassword,
);
parse_upper!(Audience, "CIAM" => Audience::Ciam, "PAM" => Audience::Pam);
parse_upper!(Environment,
    "PROD" => Environment::Prod,
    "TEST" => Environment::Test,
    "DEV" => Environment::Dev,
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Charset {
    Alphanumeric,
    AlphanumericSymbols,
    Hex,
}

const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
const SYMBOLS: &[u8] = b"!#$%&*+-=?@^_";
const HEX: &[u8] = b"0123456789abcdef";

impl Charset {
    pub fn alphabet(self) -> Vec<u8> {
        match self {
            Charset::Alphanumeric => ALNUM.to_vec(),
            Charset::AlphanumericSymbols => [ALNUM, SYMBOLS].concat(),
            Charset::Hex => HEX.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationPolicy {
    /// Scheduled rotation period; `None` rotates only on events.
    pub interval_ms: Option<u64>,
    pub length: usize,
    pub charset: Charset,
}

impl Default for RotationPolicy {
    fn default() -> Self {
        Self {
            interval_ms: None,
            length: 32,
            charset: Charset::AlphanumericSymbols,
        }
    }
}

impl RotationPolicy {
    pub const MIN_LENGTH: usize = 8;
    pub const MAX_LENGTH: usize = 1024;

    fn check(&self) -> Result<(), VaultError> {
        if (Self::MIN_LENGTH..=Self::MAX_LENGTH).contains(&self.length) {
            Ok(())
        } else {
            Err(VaultError::Validation(Field::RotationPolicy))
        }
    }

    pub fn generate(&self) -> Zeroizing<String> {
        let alphabet = self.charset.alphabet();
        let mut rng = rand::rngs::OsRng;
        let s: String = (0..self.length)
            .map(|_| *alphabet.choose(&mut rng).expect("non-empty alphabet") as char)
            .collect();
        Zeroizing::new(s)
    }
}

/// Stored form of a credential. Holds only ciphertext.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub id: Id,
    pub kind: CredentialKind,
    pub audience: Audience,
    pub environment: Environment,
    /// base64 nonce
    pub nonce: String,
    /// base64 ciphertext with tag
    pub ciphertext: String,
    pub rotation_policy: RotationPolicy,
    pub version: u32,
    pub created_at: DateTime<Utc>,
    pub rotated_at: Option<DateTime<Utc>>,
    pub next_rotation: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CredentialSummary {
    pub id: Id,
    pub kind: CredentialKind,
    pub audience: Audience,
    pub environment: Environment,
    pub version: u32,
    pub created_at: DateTime<Utc>,
    pub rotated_at: Option<DateTime<Utc>>,
}

impl From<&Credential> for CredentialSummary {
    fn from(c: &Credential) -> Self {
        Self {
            id: c.id.clone(),
            kind: c.kind,
            audience: c.audience,
            environment: c.environment,
            version: c.version,
            created_at: c.created_at,
            rotated_at: c.rotated_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VaultError {
    #[error("not authorized: {0}")]
    Authorization(ReasonCode),
    #[error("invalid {0}")]
    Validation(Field),
    #[error("recent MFA required")]
    MfaRequired,
    #[error("unknown credential")]
    UnknownCredential,
    #[error("credential belongs to another environment")]
    EnvironmentMismatch,
    #[error("unknown session")]
    UnknownSession,
    #[error("session closed")]
    SessionClosed,
    #[error("vault key unusable: {0}")]
    Key(String),
    #[error("sealing failed")]
    Crypto,
    #[error("storage: {0}")]
    Storage(StoreError),
}

impl VaultError {
    pub fn code(&self) -> &'static str {
        match self {
            VaultError::Authorization(_) => "AUTHORIZATION_ERROR",
            VaultError::Validation(_) => "VALIDATION_ERROR",
            VaultError::MfaRequired => "MFA_REQUIRED",
            VaultError::UnknownCredential => "UNKNOWN_CREDENTIAL",
            VaultError::EnvironmentMismatch => "ENVIRONMENT_MISMATCH",
            VaultError::UnknownSession => "UNKNOWN_SESSION",
            VaultError::SessionClosed => "SESSION_CLOSED",
            VaultError::Key(_) | VaultError::Crypto | VaultError::Storage(_) => "INTERNAL",
        }
    }
}

impl From<StoreError> for VaultError {
    fn from(e: StoreError) -> Self {
        VaultError::Storage(e)
    }
}

/// 256-bit master key for sealing.
#[derive(Clone)]
pub struct VaultKey(Zeroizing<[u8; 32]>);

impl std::fmt::Debug for VaultKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("VaultKey(..)")
    }
}

impl VaultKey {
    pub fn generate() -> Self {
        let mut k = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut k);
        Self(Zeroizing::new(k))
    }

    /// Accepts 64 hex characters or standard base64 of 32 bytes.
    pub fn parse(s: &str) -> Result<Self, VaultError> {
        let s = s.trim();
        let mut bytes = if s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit()) {
            (0..32)
                .map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16))
                .collect::<Result<Vec<u8>, _>>()
                .map_err(|e| VaultError::Key(e.to_string()))?
        } else {
            STANDARD
                .decode(s)
                .map_err(|e| VaultError::Key(e.to_string()))?
        };
        let key: [u8; 32] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| VaultError::Key("expected 32 bytes".into()))?;
        bytes.zeroize();
        Ok(Self(Zeroizing::new(key)))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn cipher(&self) -> ChaCha20Poly1305 {
        ChaCha20Poly1305::new(Key::from_slice(&self.0[..]))
    }
}

fn aad(c: &Credential) -> Vec<u8> {
    serde_json::to_vec(&(&c.id, c.kind, c.audience, c.environment, c.version)).unwrap_or_default()
}

fn seal(key: &VaultKey, c: &mut Credential, plaintext: &str) -> Result<(), VaultError> {
    let mut nonce = [0u8; 12];
    rand::rngs::OsRng.fill_bytes(&mut nonce);
    let ct = key
        .cipher()
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: plaintext.as_bytes(),
                aad: &aad(c),
            },
        )
        .map_err(|_| VaultError::Crypto)?;
    c.nonce = STANDARD.encode(nonce);
    c.ciphertext = STANDARD.encode(ct);
    Ok(())
}

fn open(key: &VaultKey, c: &Credential) -> Result<Zeroizing<String>, VaultError> {
    let nonce = STANDARD.decode(&c.nonce).map_err(|_| VaultError::Crypto)?;
    let ct = STANDARD
        .decode(&c.ciphertext)
        .map_err(|_| VaultError::Crypto)?;
    if nonce.len() != 12 {
        return Err(VaultError::Crypto);
    }
    let pt = key
        .cipher()
        .decrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: &ct,
                aad: &aad(c),
            },
        )
        .map_err(|_| VaultError::Crypto)?;
    String::from_utf8(pt)
        .map(Zeroizing::new)
        .map_err(|_| VaultError::Crypto)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RotationTrigger {
    Scheduled,
    Event,
}

/// Receives each new secret so the managed system can be re-keyed.
pub trait RotationHook: Send + Sync {
    fn rotated(&self, credential_id: &str, version: u32, secret: &str) -> Result<(), String>;
}

/// Stand-in for a managed system: accepts only the latest secret it was
/// given for each credential.
#[derive(Default)]
pub struct SimulatedTarget {
    secrets: Mutex<HashMap<Id, Zeroizing<String>>>,
}

impl SimulatedTarget {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn enroll(&self, credential_id: &str, secret: &str) {
        self.secrets.lock().insert(
            credential_id.to_string(),
            Zeroizing::new(secret.to_string()),
        );
    }

    pub fn authenticate(&self, credential_id: &str, secret: &str) -> bool {
        self.secrets
            .lock()
            .get(credential_id)
            .is_some_and(|s| s.as_str() == secret)
    }
}

impl RotationHook for SimulatedTarget {
    fn rotated(&self, credential_id: &str, _version: u32, secret: &str) -> Result<(), String> {
        self.enroll(credential_id, secret);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub time: DateTime<Utc>,
    pub kind: String,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivilegedSession {
    pub id: Id,
    pub user_id: Id,
    pub target: String,
    pub started_at: DateTime<Utc>,
    pub ended_at: Option<DateTime<Utc>>,
    pub events: Vec<SessionEvent>,
}

/// Vault audit line.
#[derive(Debug, Clone, Serialize)]
pub struct VaultRecord<'a> {
    pub time: DateTime<Utc>,
    pub actor: &'a str,
    pub op: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub credential_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trigger: Option<RotationTrigger>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session: Option<&'a PrivilegedSession>,
    pub outcome: &'a str,
}

impl<'a> VaultRecord<'a> {
    fn new(time: DateTime<Utc>, actor: &'a str, op: &'static str, outcome: &'a str) -> Self {
        Self {
            time,
            actor,
            op,
            credential_id: None,
            version: None,
            trigger: None,
            session_id: None,
            target: None,
            session: None,
            outcome,
        }
    }
}

/// Actor name recorded for scheduler-driven rotations.
pub const SCHEDULER_ACTOR: &str = "scheduler";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewCredential {
    pub kind: CredentialKind,
    pub audience: Audience,
    pub environment: Environment,
    #[serde(default)]
    pub rotation_policy: RotationPolicy,
}

pub struct Vault {
    store: Arc<Store>,
    policy: Arc<PolicyEngine>,
    clock: SharedClock,
    audit: AuditLog,
    key: VaultKey,
    app: String,
    hooks: Mutex<Vec<Arc<dyn RotationHook>>>,
    sessions: Mutex<HashMap<Id, PrivilegedSession>>,
}

impl Vault {
    pub fn new(
        store: Arc<Store>,
        policy: Arc<PolicyEngine>,
        clock: SharedClock,
        audit: AuditLog,
        key: VaultKey,
        app: impl Into<String>,
    ) -> Self {
        Self {
            store,
            policy,
            clock,
            audit,
            key,
            app: app.into(),
            hooks: Mutex::new(Vec::new()),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn add_hook(&self, hook: Arc<dyn RotationHook>) {
        self.hooks.lock().push(hook);
    }

    fn authorize(&self, actor: &str, action: &str) -> Result<Decision, VaultError> {
        let d = self
            .policy
            .decide(&AccessRequest::new(actor, VAULT_MODULE, action, &self.app));
        match d.reason_code {
            None => Ok(d),
            Some(code) => Err(VaultError::Authorization(code)),
        }
    }

    fn fail(&self, actor: &str, op: &'static str, credential_id: Option<&str>, e: &VaultError) {
        self.audit.record(&VaultRecord {
            credential_id,
            ..VaultRecord::new(self.clock.now(), actor, op, e.code())
        });
    }

    pub fn store_credential(
        &self,
        spec: NewCredential,
        secret: &str,
        actor: &str,
    ) -> Result<Id, VaultError> {
        let r = self.store_inner(spec, secret, actor);
        if let Err(e) = &r {
            self.fail(actor, "store", None, e);
        }
        r
    }

    fn store_inner(
        &self,
        spec: NewCredential,
        secret: &str,
        actor: &str,
    ) -> Result<Id, VaultError> {
        let decision = self.authorize(actor, "create")?;
        if secret.is_empty() {
            return Err(VaultError::Validation(Field::Secret));
        }
        spec.rotation_policy.check()?;
        if !decision.admits(&[spec.environment.tag().to_string()]) {
            return Err(VaultError::EnvironmentMismatch);
        }
        let now = self.clock.now();
        let mut c = Credential {
            id: new_id(),
            kind: spec.kind,
            audience: spec.audience,
            environment: spec.environment,
            nonce: String::new(),
            ciphertext: String::new(),
            rotation_policy: spec.rotation_policy,
            version: 1,
            created_at: now,
            rotated_at: None,
            next_rotation: next_rotation(&spec.rotation_policy, now),
        };
        seal(&self.key, &mut c, secret)?;
        let id = c.id.clone();
        self.store.write(|t| t.put_credential(c))?;
        self.audit.record(&VaultRecord {
            credential_id: Some(&id),
            version: Some(1),
            ..VaultRecord::new(now, actor, "store", "ok")
        });
        Ok(id)
    }

    /// `mfa_verified_at` is the MFA completion time carried by the actor's
    /// access token; it must be at most five minutes old.
    pub fn retrieve_credential(
        &self,
        id: &str,
        actor: &str,
        mfa_verified_at: Option<DateTime<Utc>>,
    ) -> Result<Zeroizing<String>, VaultError> {
        match self.retrieve_inner(id, actor, mfa_verified_at) {
            Ok((secret, version)) => {
                self.audit.record(&VaultRecord {
                    credential_id: Some(id),
                    version: Some(version),
                    ..VaultRecord::new(self.clock.now(), actor, "retrieve", "ok")
                });
                Ok(secret)
            }
            Err(e) => {
                self.fail(actor, "retrieve", Some(id), &e);
                Err(e)
            }
        }
    }

    fn retrieve_inner(
        &self,
        id: &str,
        actor: &str,
        mfa_verified_at: Option<DateTime<Utc>>,
    ) -> Result<(Zeroizing<String>, u32), VaultError> {
        let decision = self.authorize(actor, "read")?;
        let now = self.clock.now();
        let fresh = mfa_verified_at.is_some_and(|t| {
            t <= now + Duration::seconds(5) && now - t <= Duration::seconds(MFA_PROOF_MAX_AGE_SECS)
        });
        if !fresh {
            return Err(VaultError::MfaRequired);
        }
        // One read: the ciphertext and version come from the same state.
        let c = self
            .store
            .read(|t| t.credential(id).cloned())
            .ok_or(VaultError::UnknownCredential)?;
        if !decision.admits(&[c.environment.tag().to_string()]) {
            return Err(VaultError::EnvironmentMismatch);
        }
        Ok((open(&self.key, &c)?, c.version))
    }

    /// Rotation requested by an actor.
    pub fn rotate_as(&self, id: &str, actor: &str) -> Result<u32, VaultError> {
        let check = self.authorize(actor, "rotate").and_then(|d| {
            let env = self
                .store
                .read(|t| t.credential(id).map(|c| c.environment))
                .ok_or(VaultError::UnknownCredential)?;
            if d.admits(&[env.tag().to_string()]) {
                Ok(())
            } else {
                Err(VaultError::EnvironmentMismatch)
            }
        });
        if let Err(e) = check {
            self.fail(actor, "rotate", Some(id), &e);
            return Err(e);
        }
        self.rotate(id, RotationTrigger::Event, actor)
    }

    /// Replaces the secret with a fresh one drawn per the credential's
    /// policy and notifies the hooks. Returns the new version.
    pub fn rotate_credential(&self, id: &str, trigger: RotationTrigger) -> Result<u32, VaultError> {
        self.rotate(id, trigger, SCHEDULER_ACTOR)
    }

    fn rotate(&self, id: &str, trigger: RotationTrigger, actor: &str) -> Result<u32, VaultError> {
        let now = self.clock.now();
        let result = self.store.write(|t| {
            let mut c = t
                .credential(id)
                .cloned()
                .ok_or(VaultError::UnknownCredential)?;
            let secret = c.rotation_policy.generate();
            c.version += 1;
            c.rotated_at = Some(now);
            c.next_rotation = next_rotation(&c.rotation_policy, now);
            seal(&self.key, &mut c, &secret)?;
            let version = c.version;
            t.put_credential(c)?;
            Ok::<_, VaultError>((version, secret))
        });
        let (version, secret) = match result {
            Ok(v) => v,
            Err(e) => {
                self.fail(actor, "rotate", Some(id), &e);
                return Err(e);
            }
        };
        let mut outcome = "ok";
        for hook in self.hooks.lock().iter() {
            if let Err(e) = hook.rotated(id, version, &secret) {
                tracing::warn!(credential = id, error = %e, "rotation hook failed");
                outcome = "HOOK_FAILED";
            }
        }
        self.audit.record(&VaultRecord {
            credential_id: Some(id),
            version: Some(version),
            trigger: Some(trigger),
            ..VaultRecord::new(now, actor, "rotate", outcome)
        });
        Ok(version)
    }

    /// Rotates every credential whose scheduled time has passed.
    pub fn rotate_due(&self) -> usize {
        let now = self.clock.now();
        let due: Vec<Id> = self.store.read(|t| {
            t.credentials()
                .filter(|c| c.next_rotation.is_some_and(|n| n <= now))
                .map(|c| c.id.clone())
                .collect()
        });
        due.iter()
            .filter(|id| {
                self.rotate_credential(id, RotationTrigger::Scheduled)
                    .is_ok()
            })
            .count()
    }

    pub fn list(
        &self,
        actor: &str,
        audience: Option<Audience>,
        environment: Option<Environment>,
    ) -> Result<Vec<CredentialSummary>, VaultError> {
        let decision = self.authorize(actor, "list").inspect_err(|e| {
            self.fail(actor, "list", None, e);
        })?;
        Ok(self.store.read(|t| {
            t.credentials()
                .filter(|c| audience.is_none_or(|a| a == c.audience))
                .filter(|c| environment.is_none_or(|e| e == c.environment))
                .filter(|c| decision.admits(&[c.environment.tag().to_string()]))
                .map(CredentialSummary::from)
                .collect()
        }))
    }

    pub fn psm_start(&self, actor: &str, target: &str) -> Result<Id, VaultError> {
        if let Err(e) = self.authorize(actor, "session") {
            self.fail(actor, "psm_start", None, &e);
            return Err(e);
        }
        if target.trim().is_empty() {
            return Err(VaultError::Validation(Field::Identifier));
        }
        let now = self.clock.now();
        let session = PrivilegedSession {
            id: new_id(),
            user_id: actor.to_string(),
            target: target.to_string(),
            started_at: now,
            ended_at: None,
            events: Vec::new(),
        };
        let id = session.id.clone();
        self.sessions.lock().insert(id.clone(), session);
        self.audit.record(&VaultRecord {
            session_id: Some(&id),
            target: Some(target),
            ..VaultRecord::new(now, actor, "psm_start", "ok")
        });
        Ok(id)
    }

    pub fn session_owner(&self, session_id: &str) -> Option<Id> {
        self.sessions
            .lock()
            .get(session_id)
            .map(|s| s.user_id.clone())
    }

    pub fn psm_record(
        &self,
        session_id: &str,
        kind: &str,
        detail: Value,
    ) -> Result<(), VaultError> {
        let now = self.clock.now();
        let mut sessions = self.sessions.lock();
        let s = sessions
            .get_mut(session_id)
            .ok_or(VaultError::UnknownSession)?;
        if s.ended_at.is_some() {
            return Err(VaultError::SessionClosed);
        }
        s.events.push(SessionEvent {
            time: now,
            kind: kind.to_string(),
            detail,
        });
        Ok(())
    }

    /// Closes the session and writes it, with all its events, to the audit
    /// sink.
    pub fn psm_end(&self, session_id: &str) -> Result<PrivilegedSession, VaultError> {
        let now = self.clock.now();
        let session = {
            let mut sessions = self.sessions.lock();
            let s = sessions
                .get_mut(session_id)
                .ok_or(VaultError::UnknownSession)?;
            if s.ended_at.is_some() {
                return Err(VaultError::SessionClosed);
            }
            s.ended_at = Some(now.max(s.started_at));
            s.clone()
        };
        self.audit.record(&VaultRecord {
            session_id: Some(session_id),
            target: Some(&session.target),
            session: Some(&session),
            ..VaultRecord::new(now, &session.user_id, "psm_end", "ok")
        });
        Ok(session)
    }

    /// Runs [`Vault::rotate_due`] every `interval` on a background thread.
    pub fn start_scheduler(self: &Arc<Self>, interval: std::time::Duration) -> RotationScheduler {
        let (stop, rx) = bounded::<()>(1);
        let vault = Arc::clone(self);
        let worker = std::thread::spawn(move || {
            while let Err(RecvTimeoutError::Timeout) = rx.recv_timeout(interval) {
                vault.rotate_due();
            }
        });
        RotationScheduler {
            stop: Some(stop),
            worker: Some(worker),
        }
    }
}

fn next_rotation(policy: &RotationPolicy, from: DateTime<Utc>) -> Option<DateTime<Utc>> {
    policy
        .interval_ms
        .map(|ms| from + Duration::milliseconds(ms as i64))
}

/// Stops the rotation ticker when dropped.
pub struct RotationScheduler {
    stop: Option<Sender<()>>,
    worker: Option<JoinHandle<()>>,
}

impl RotationScheduler {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for RotationScheduler {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_round_trip_binds_metadata() {
        let key = VaultKey::generate();
        let mut c = Credential {
            id: "c1".into(),
            kind: CredentialKind::ApiKey,
            audience: Audience::Pam,
            environment: Environment::Prod,
            nonce: String::new(),
            ciphertext: String::new(),
            rotation_policy: RotationPolicy::default(),
            version: 1,
            created_at: Utc::now(),
            rotated_at: None,
            next_rotation: None,
        };
        seal(&key, &mut c, "hunter2-secret").unwrap();
        assert_eq!(open(&key, &c).unwrap().as_str(), "hunter2-secret");
        assert!(!c.ciphertext.contains("hunter2"));
        let mut moved = c.clone();
        moved.environment = Environment::Dev;
        assert_eq!(open(&key, &moved), Err(VaultError::Crypto));
        assert_eq!(open(&VaultKey::generate(), &c), Err(VaultError::Crypto));
    }

    #[test]
    fn key_parses_hex_and_base64() {
        let k = VaultKey::generate();
        let hex = k.to_hex();
        assert_eq!(VaultKey::parse(&hex).unwrap().to_hex(), hex);
        let b64 = STANDARD.encode([7u8; 32]);
        assert_eq!(VaultKey::parse(&b64).unwrap().to_hex(), "07".repeat(32));
        assert!(VaultKey::parse("short").is_err());
    }

    #[test]
    fn generated_secrets_follow_policy() {
        for charset in [
            Charset::Alphanumeric,
            Charset::AlphanumericSymbols,
            Charset::Hex,
        ] {
            let p = RotationPolicy {
                interval_ms: None,
                length: 40,
                charset,
            };
            let alphabet = charset.alphabet();
            let s = p.generate();
            assert_eq!(s.len(), 40);
            assert!(s.bytes().all(|b| alphabet.contains(&b)));
        }
        assert!(RotationPolicy {
            length: 4,
            ..Default::default()
        }
        .check()
        .is_err());
    }

    #[test]
    fn enums_parse_case_insensitively() {
        assert_eq!("prod".parse(), Ok(Environment::Prod));
        assert_eq!("ssh-key".parse(), Ok(CredentialKind::SshKey));
        assert_eq!("pam".parse(), Ok(Audience::Pam));
        assert!("staging".parse::<Environment>().is_err());
    }

    #[test]
    fn simulated_target_accepts_latest_only() {
        let t = SimulatedTarget::new();
        t.enroll("c", "old");
        t.rotated("c", 2, "new").unwrap();
        assert!(t.authenticate("c", "new"));
        assert!(!t.authenticate("c", "old"));
    }
}
