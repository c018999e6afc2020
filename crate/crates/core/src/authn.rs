//! Login, second-factor completion, and refresh-token rotation.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;
use zeroize::Zeroize;

use crate::audit::{AuditEvent, AuditLog};
use crate::captcha::CaptchaVerifier;
use crate::clock::SharedClock;
use crate::mfa::{MfaError, MfaService};
use crate::model::{MfaType, UserStatus};
use crate::monitor::{mfa_requirement, EventKind, MfaRequirement, Monitor, TelemetryEvent};
use crate::password::PasswordHasher;
use crate::store::{Store, StoreError};
use crate::token::{Claims, TokenError, TokenService, TokenType};
use crate::validate::{self, Field};

#[derive(Clone, Default, Deserialize)]
pub struct Credentials {
    /// Email address or phone number.
    pub identifier: String,
    pub password: String,
    #[serde(default)]
    pub captcha_response: Option<String>,
    #[serde(default)]
    pub device_id: Option<String>,
    #[serde(default)]
    pub location: Option<String>,
}

impl std::fmt::Debug for Credentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Credentials")
            .field("identifier", &self.identifier)
            .field("device_id", &self.device_id)
            .field("location", &self.location)
            .finish_non_exhaustive()
    }
}

impl Drop for Credentials {
    fn drop(&mut self) {
        self.password.zeroize();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub access_token: String,
    pub refresh_token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LoginOutcome {
    Authenticated(TokenPair),
    MfaRequired {
        mfa_token: String,
        channel: MfaType,
        /// Risk demanded the factor although the user has MFA off.
        forced: bool,
        risk_score: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("invalid {0}")]
    Validation(Field),
    #[error("captcha rejected")]
    Captcha,
    #[error("invalid credentials")]
    InvalidCredentials,
    #[error("email address not verified")]
    EmailNotVerified,
    #[error("token rejected: {0}")]
    TokenValidation(TokenError),
    #[error("token revoked")]
    Revoked,
    #[error("second factor rejected")]
    MfaValidation,
    #[error("internal: {0}")]
    Internal(String),
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::Validation(_) => "VALIDATION_ERROR",
            AuthError::Captcha => "CAPTCHA_ERROR",
            AuthError::InvalidCredentials => "INVALID_CREDENTIALS",
            AuthError::EmailNotVerified => "EMAIL_NOT_VERIFIED",
            AuthError::TokenValidation(_) => "TOKEN_VALIDATION_ERROR",
            AuthError::Revoked => "TOKEN_REVOKED",
            AuthError::MfaValidation => "MFA_VALIDATION_ERROR",
            AuthError::Internal(_) => "INTERNAL",
        }
    }
}

impl From<TokenError> for AuthError {
    fn from(e: TokenError) -> Self {
        match e {
            TokenError::Revoked => AuthError::Revoked,
            TokenError::Issuance(m) => AuthError::Internal(m),
            other => AuthError::TokenValidation(other),
        }
    }
}

impl From<StoreError> for AuthError {
    fn from(e: StoreError) -> Self {
        AuthError::Internal(e.to_string())
    }
}

impl From<MfaError> for AuthError {
    fn from(e: MfaError) -> Self {
        match e {
            MfaError::MfaValidation | MfaError::NoPendingChallenge => AuthError::MfaValidation,
            other => AuthError::Internal(other.to_string()),
        }
    }
}

/// Device and location of a login awaiting its second factor.
type PendingLogin = (Option<String>, Option<String>);

pub struct AuthService {
    store: Arc<Store>,
    tokens: Arc<TokenService>,
    mfa: Arc<MfaService>,
    monitor: Arc<Monitor>,
    captcha: Arc<dyn CaptchaVerifier>,
    hasher: Arc<dyn PasswordHasher>,
    clock: SharedClock,
    audit: AuditLog,
    site: String,
    dummy_hash: OnceLock<String>,
    pending: Mutex<HashMap<Uuid, PendingLogin>>,
}

impl AuthService {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: Arc<Store>,
        tokens: Arc<TokenService>,
        mfa: Arc<MfaService>,
        monitor: Arc<Monitor>,
        captcha: Arc<dyn CaptchaVerifier>,
        hasher: Arc<dyn PasswordHasher>,
        clock: SharedClock,
        audit: AuditLog,
        site: impl Into<String>,
    ) -> Self {
        Self {
            store,
            tokens,
            mfa,
            monitor,
            captcha,
            hasher,
            clock,
            audit,
            site: site.into(),
            dummy_hash: OnceLock::new(),
            pending: Mutex::new(HashMap::new()),
        }
    }

    /// Hash checked for unknown identifiers so both paths cost one verify.
    fn dummy_hash(&self) -> &str {
        self.dummy_hash
            .get_or_init(|| self.hasher.hash("dummy-Password-1").unwrap_or_default())
    }

    fn telemetry(&self, kind: EventKind, subject: &str, attrs: &[(&str, Option<&str>)]) {
        let mut event = TelemetryEvent::new(self.clock.now(), &self.site, kind).subject(subject);
        for (k, v) in attrs {
            if let Some(v) = v {
                event = event.attr(k, *v);
            }
        }
        if let Err(e) = self.monitor.ingest(event) {
            tracing::debug!(error = %e, "login telemetry dropped");
        }
    }

    pub fn login(
        &self,
        credentials: Credentials,
        captcha_enabled: bool,
    ) -> Result<LoginOutcome, AuthError> {
        let identifier = credentials.identifier.trim();
        validate::identifier(identifier).map_err(AuthError::Validation)?;
        if credentials.password.is_empty() {
            return Err(AuthError::Validation(Field::Password));
        }
        if captcha_enabled && !self.captcha.verify(credentials.captcha_response.as_deref()) {
            return Err(AuthError::Captcha);
        }

        let email = validate::normalize_email(identifier);
        let found = self.store.read(|t| {
            t.details_by_email(&email)
                .or_else(|| t.details_by_phone(identifier))
                .and_then(|d| t.user(&d.user_id).map(|u| (u.clone(), d.clone())))
        });
        let now = self.clock.now();
        let verified = match &found {
            Some((_, d)) => self.hasher.verify(&credentials.password, &d.password_hash),
            None => {
                self.hasher.verify(&credentials.password, self.dummy_hash());
                false
            }
        };
        let user = match found {
            Some((u, d)) if verified && u.status == UserStatus::Active => {
                if !d.email_verified {
                    return Err(AuthError::EmailNotVerified);
                }
                u
            }
            other => {
                let subject = other
                    .map(|(u, _)| u.id)
                    .unwrap_or_else(|| identifier.to_string());
                self.telemetry(EventKind::LoginFailure, &subject, &[]);
                self.audit.record(
                    &AuditEvent::failed(now, "login", AuthError::InvalidCredentials.code())
                        .subject(&subject),
                );
                return Err(AuthError::InvalidCredentials);
            }
        };

        let device = credentials.device_id.as_deref();
        let location = credentials.location.as_deref();
        let ctx = self.monitor.risk_context(&user.id, device, location, now);
        let score = self.monitor.score(&ctx);
        let status = self.mfa.status(&user.id);
        let requirement = mfa_requirement(
            status.enabled,
            score,
            self.monitor.config().high_risk_threshold,
        );

        let channel = match requirement {
            MfaRequirement::NotRequired => {
                let pair = self.issue_pair(&user.id, None)?;
                self.telemetry(
                    EventKind::LoginSuccess,
                    &user.id,
                    &[("device_id", device), ("location", location)],
                );
                self.audit.record(
                    &AuditEvent::ok(now, "login")
                        .subject(&user.id)
                        .detail(json!({ "mfa": false, "risk": score })),
                );
                return Ok(LoginOutcome::Authenticated(pair));
            }
            MfaRequirement::UserSetting => status.mfa_type,
            MfaRequirement::Forced => MfaType::Email,
        };

        let mfa_token = self.tokens.issue(&user.id, TokenType::MfaRequest, None)?;
        let claims = self.tokens.validate(&mfa_token, TokenType::MfaRequest)?;
        self.mfa.begin_login(&user.id, channel, claims.jti)?;
        self.pending.lock().insert(
            claims.jti,
            (credentials.device_id.clone(), credentials.location.clone()),
        );
        let forced = requirement == MfaRequirement::Forced;
        self.audit.record(
            &AuditEvent::ok(now, "login_mfa_challenge")
                .subject(&user.id)
                .detail(json!({ "channel": channel, "forced": forced, "risk": score })),
        );
        Ok(LoginOutcome::MfaRequired {
            mfa_token,
            channel,
            forced,
            risk_score: score,
        })
    }

    pub fn complete_mfa(&self, mfa_token: &str, code: &str) -> Result<TokenPair, AuthError> {
        let claims = self.tokens.validate(mfa_token, TokenType::MfaRequest)?;
        if self.store.read(|t| t.is_revoked(&claims.jti)) {
            return Err(AuthError::Revoked);
        }
        let now = self.clock.now();
        if let Err(e) = self.mfa.verify_login(&claims.user_id, claims.jti, code) {
            self.telemetry(EventKind::LoginFailure, &claims.user_id, &[]);
            self.audit.record(
                &AuditEvent::failed(now, "mfa_login", MfaError::MfaValidation.code())
                    .subject(&claims.user_id),
            );
            return Err(e.into());
        }
        let exp = claims.expires_at();
        self.store.write(|t| {
            if t.revoke_token(claims.jti, exp) {
                Ok(())
            } else {
                Err(AuthError::Revoked)
            }
        })?;
        let pair = self.issue_pair(&claims.user_id, Some(now))?;
        let (device, location) = self.pending.lock().remove(&claims.jti).unwrap_or_default();
        self.telemetry(
            EventKind::LoginSuccess,
            &claims.user_id,
            &[
                ("device_id", device.as_deref()),
                ("location", location.as_deref()),
            ],
        );
        self.audit
            .record(&AuditEvent::ok(now, "mfa_login").subject(&claims.user_id));
        Ok(pair)
    }

    /// Rotates a refresh token: the presented one is revoked in the same
    /// transaction that checks it, so a second use fails.
    pub fn refresh(&self, refresh_token: &str) -> Result<TokenPair, AuthError> {
        let claims = self.tokens.validate(refresh_token, TokenType::Refresh)?;
        let exp = claims.expires_at();
        self.store.write(|t| {
            if !t.revoke_token(claims.jti, exp) {
                return Err(AuthError::Revoked);
            }
            match t.user(&claims.user_id) {
                Some(u) if u.status == UserStatus::Active => Ok(()),
                _ => Err(AuthError::InvalidCredentials),
            }
        })?;
        let pair = self.issue_pair(&claims.user_id, claims.mfa_verified_at())?;
        self.audit
            .record(&AuditEvent::ok(self.clock.now(), "token_refresh").subject(&claims.user_id));
        Ok(pair)
    }

    fn issue_pair(
        &self,
        user_id: &str,
        mfa_at: Option<DateTime<Utc>>,
    ) -> Result<TokenPair, AuthError> {
        Ok(TokenPair {
            access_token: self
                .tokens
                .issue_session(user_id, TokenType::Access, mfa_at)?,
            refresh_token: self
                .tokens
                .issue_session(user_id, TokenType::Refresh, mfa_at)?,
        })
    }

    /// Validates a bearer ACCESS token and checks the user is still active.
    pub fn authenticate(&self, access_token: &str) -> Result<Claims, AuthError> {
        let claims = self.tokens.validate(access_token, TokenType::Access)?;
        if self.store.read(|t| t.is_revoked(&claims.jti)) {
            return Err(AuthError::Revoked);
        }
        let active = self.store.read(|t| {
            t.user(&claims.user_id)
                .is_some_and(|u| u.status == UserStatus::Active)
        });
        if !active {
            return Err(AuthError::InvalidCredentials);
        }
        Ok(claims)
    }
}
