//! Second factors: mailed one-time codes, RFC 6238 TOTP, and backup codes.

use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use data_encoding::BASE32_NOPAD;
use hmac::{Hmac, Mac};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use rand::distributions::{Alphanumeric, DistString};
use rand::RngCore;
use serde::Serialize;
use sha1::Sha1;
use uuid::Uuid;

use crate::audit::{AuditEvent, AuditLog};
use crate::clock::SharedClock;
use crate::identity::generate_otp;
use crate::mail::{MailClient, MailMessage, TEMPLATE_MFA_OTP};
use crate::model::{ChallengePurpose, MfaChallenge, MfaRecord, MfaType, UserStatus};
use crate::password::PasswordHasher;
use crate::store::{Store, StoreError};
use crate::validate::Field;

pub const TOTP_SECRET_BYTES: usize = 20;
pub const BACKUP_CODE_COUNT: usize = 10;
pub const BACKUP_CODE_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TotpParams {
    pub digits: u32,
    pub period_secs: i64,
    /// Accepted steps either side of the current one.
    pub skew: i64,
}

impl Default for TotpParams {
    fn default() -> Self {
        Self {
            digits: 6,
            period_secs: 30,
            skew: 1,
        }
    }
}

/// RFC 4226 HOTP with HMAC-SHA1.
pub fn hotp(key: &[u8], counter: u64, digits: u32) -> u32 {
    let mut mac = Hmac::<Sha1>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(&counter.to_be_bytes());
    let h = mac.finalize().into_bytes();
    let offset = (h[19] & 0x0f) as usize;
    let bin = u32::from_be_bytes([
        h[offset] & 0x7f,
        h[offset + 1],
        h[offset + 2],
        h[offset + 3],
    ]);
    bin % 10u32.pow(digits)
}

pub fn totp(key: &[u8], unix_secs: i64, params: &TotpParams) -> u32 {
    hotp(key, (unix_secs / params.period_secs) as u64, params.digits)
}

/// True iff `code` is the TOTP for `at` or a step within the skew.
pub fn verify_totp(key: &[u8], code: &str, at: i64, params: &TotpParams) -> bool {
    if code.len() != params.digits as usize || !code.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    let Ok(given) = code.parse::<u32>() else {
        return false;
    };
    let step = at.div_euclid(params.period_secs);
    (-params.skew..=params.skew)
        .map(|d| step + d)
        .filter(|s| *s >= 0)
        .any(|s| hotp(key, s as u64, params.digits) == given)
}

pub fn generate_totp_secret() -> String {
    let mut bytes = [0u8; TOTP_SECRET_BYTES];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    BASE32_NOPAD.encode(&bytes)
}

pub fn decode_secret(b32: &str) -> Option<Vec<u8>> {
    BASE32_NOPAD.decode(b32.as_bytes()).ok()
}

pub fn provisioning_uri(issuer: &str, account: &str, secret_b32: &str) -> String {
    let issuer = utf8_percent_encode(issuer, NON_ALPHANUMERIC);
    let account = utf8_percent_encode(account, NON_ALPHANUMERIC);
    format!("otpauth://totp/{issuer}:{account}?secret={secret_b32}&issuer={issuer}")
}

pub fn generate_backup_codes() -> Vec<String> {
    let mut rng = rand::rngs::OsRng;
    (0..BACKUP_CODE_COUNT)
        .map(|_| Alphanumeric.sample_string(&mut rng, BACKUP_CODE_LEN))
        .collect()
}

fn looks_like_backup_code(code: &str) -> bool {
    code.len() == BACKUP_CODE_LEN && code.bytes().all(|b| b.is_ascii_alphanumeric())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MfaError {
    #[error("invalid {0}")]
    Validation(Field),
    #[error("unknown user")]
    UnknownUser,
    #[error("no pending challenge")]
    NoPendingChallenge,
    #[error("second factor rejected")]
    MfaValidation,
    #[error("storage: {0}")]
    Storage(StoreError),
    #[error("mail: {0}")]
    Mail(String),
    #[error("hashing: {0}")]
    Hashing(String),
}

impl MfaError {
    pub fn code(&self) -> &'static str {
        match self {
            MfaError::Validation(_) => "VALIDATION_ERROR",
            MfaError::UnknownUser => "UNKNOWN_USER",
            MfaError::NoPendingChallenge => "NO_PENDING_CHALLENGE",
            MfaError::MfaValidation => "MFA_VALIDATION_ERROR",
            MfaError::Storage(_) | MfaError::Mail(_) | MfaError::Hashing(_) => "INTERNAL",
        }
    }
}

impl From<StoreError> for MfaError {
    fn from(e: StoreError) -> Self {
        MfaError::Storage(e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MfaSettings {
    pub otp_ttl: Duration,
    pub max_attempts: u32,
    pub issuer: String,
    pub totp: TotpParams,
}

impl Default for MfaSettings {
    fn default() -> Self {
        Self {
            otp_ttl: Duration::minutes(5),
            max_attempts: 5,
            issuer: "chez".into(),
            totp: TotpParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToggleChallenge {
    #[serde(rename = "type")]
    pub mfa_type: MfaType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub otpauth_uri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToggleOutcome {
    pub enabled: bool,
    /// Plaintext codes, returned once on enable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backup_codes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MfaStatus {
    pub enabled: bool,
    #[serde(rename = "type")]
    pub mfa_type: MfaType,
}

/// Result of checking a code against a challenge, decided under the lock.
enum Check {
    Pass,
    Fail,
}

pub struct MfaService {
    store: Arc<Store>,
    mail: Arc<dyn MailClient>,
    hasher: Arc<dyn PasswordHasher>,
    clock: SharedClock,
    audit: AuditLog,
    settings: MfaSettings,
}

impl MfaService {
    pub fn new(
        store: Arc<Store>,
        mail: Arc<dyn MailClient>,
        hasher: Arc<dyn PasswordHasher>,
        clock: SharedClock,
        audit: AuditLog,
        settings: MfaSettings,
    ) -> Self {
        Self {
            store,
            mail,
            hasher,
            clock,
            audit,
            settings,
        }
    }

    pub fn status(&self, user_id: &str) -> MfaStatus {
        self.store.read(|t| match t.mfa(user_id) {
            Some(r) => MfaStatus {
                enabled: r.enabled,
                mfa_type: r.mfa_type,
            },
            None => MfaStatus {
                enabled: false,
                mfa_type: MfaType::Email,
            },
        })
    }

    pub fn record(&self, user_id: &str) -> Option<MfaRecord> {
        self.store.read(|t| t.mfa(user_id).cloned())
    }

    fn email_of(&self, user_id: &str) -> Result<String, MfaError> {
        self.store
            .read(|t| match (t.user(user_id), t.details_for_user(user_id)) {
                (Some(u), Some(d)) if u.status == UserStatus::Active => Ok(d.email.clone()),
                _ => Err(MfaError::UnknownUser),
            })
    }

    fn mail_code(&self, to: String, otp: u32) -> Result<(), MfaError> {
        self.mail
            .send(&MailMessage {
                to,
                template_id: TEMPLATE_MFA_OTP.into(),
                link: None,
                code: Some(format!("{otp:06}")),
            })
            .map_err(|e| MfaError::Mail(e.to_string()))
    }

    /// Starts an enable/disable request. Email mails a code; TOTP returns
    /// a fresh secret unless the user already has TOTP enabled, in which
    /// case the existing secret confirms.
    pub fn request_toggle(
        &self,
        user_id: &str,
        mfa_type: &str,
    ) -> Result<ToggleChallenge, MfaError> {
        let mfa_type: MfaType = mfa_type
            .parse()
            .map_err(|_| MfaError::Validation(Field::MfaType))?;
        let email = self.email_of(user_id)?;
        let now = self.clock.now();
        let mut record = self
            .record(user_id)
            .unwrap_or_else(|| MfaRecord::disabled(user_id));
        let mut response = ToggleChallenge {
            mfa_type,
            secret: None,
            otpauth_uri: None,
        };
        let mut pending_secret = None;
        let mut otp = None;
        match mfa_type {
            MfaType::Email => {
                let code = generate_otp();
                record.otp = Some(code);
                otp = Some(code);
            }
            MfaType::Totp => {
                let reuse = record.enabled && record.mfa_type == MfaType::Totp;
                if !reuse {
                    let secret = generate_totp_secret();
                    response.otpauth_uri =
                        Some(provisioning_uri(&self.settings.issuer, &email, &secret));
                    response.secret = Some(secret.clone());
                    pending_secret = Some(secret);
                }
            }
        }
        record.challenge = Some(MfaChallenge {
            purpose: ChallengePurpose::Toggle,
            mfa_type,
            issued_at: now,
            attempts: 0,
            pending_secret,
        });
        self.store.write(|t| t.put_mfa(record))?;
        if let Some(code) = otp {
            self.mail_code(email, code)?;
        }
        self.audit.record(
            &AuditEvent::ok(now, "mfa_toggle_requested")
                .subject(user_id)
                .detail(serde_json::json!({ "type": mfa_type })),
        );
        Ok(response)
    }

    /// Checks `code` against the pending challenge, counting the attempt.
    /// Must run inside a write transaction.
    fn check_code(&self, record: &mut MfaRecord, code: &str, now: DateTime<Utc>) -> Check {
        let Some(ch) = record.challenge.as_mut() else {
            return Check::Fail;
        };
        let ok = match ch.mfa_type {
            MfaType::Email => {
                if now - ch.issued_at > self.settings.otp_ttl {
                    record.challenge = None;
                    record.otp = None;
                    return Check::Fail;
                }
                code.len() == 6
                    && code.bytes().all(|b| b.is_ascii_digit())
                    && code.parse::<u32>().ok() == record.otp
            }
            MfaType::Totp => {
                let secret = ch.pending_secret.as_ref().or(record.totp_secret.as_ref());
                secret.and_then(|s| decode_secret(s)).is_some_and(|key| {
                    verify_totp(&key, code, now.timestamp(), &self.settings.totp)
                })
            }
        };
        if ok {
            return Check::Pass;
        }
        ch.attempts += 1;
        if ch.attempts >= self.settings.max_attempts {
            record.challenge = None;
            record.otp = None;
        }
        Check::Fail
    }

    pub fn confirm_toggle(
        &self,
        user_id: &str,
        code: &str,
        enable: bool,
    ) -> Result<ToggleOutcome, MfaError> {
        let now = self.clock.now();
        let pending = self.store.read(|t| {
            t.mfa(user_id)
                .and_then(|r| r.challenge.as_ref())
                .is_some_and(|c| c.purpose == ChallengePurpose::Toggle)
        });
        if !pending {
            return Err(MfaError::NoPendingChallenge);
        }
        let codes = if enable {
            let plain = generate_backup_codes();
            let hashed = plain
                .iter()
                .map(|c| self.hasher.hash(c))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| MfaError::Hashing(e.to_string()))?;
            Some((plain, hashed))
        } else {
            None
        };

        let passed = self.store.write(|t| {
            let mut record = t
                .mfa(user_id)
                .cloned()
                .ok_or(MfaError::NoPendingChallenge)?;
            let challenge = match &record.challenge {
                Some(c) if c.purpose == ChallengePurpose::Toggle => c.clone(),
                _ => return Err(MfaError::NoPendingChallenge),
            };
            let passed = match self.check_code(&mut record, code, now) {
                Check::Fail => false,
                Check::Pass => {
                    if enable {
                        record.enabled = true;
                        record.mfa_type = challenge.mfa_type;
                        if challenge.mfa_type == MfaType::Totp {
                            if let Some(s) = challenge.pending_secret {
                                record.totp_secret = Some(s);
                            }
                        } else {
                            record.totp_secret = None;
                        }
                        record.backup_codes =
                            codes.as_ref().map(|(_, h)| h.clone()).unwrap_or_default();
                    } else {
                        record.enabled = false;
                        record.totp_secret = None;
                        record.backup_codes.clear();
                    }
                    record.otp = None;
                    record.challenge = None;
                    true
                }
            };
            t.put_mfa(record)?;
            Ok(passed)
        })?;

        let op = if enable { "mfa_enable" } else { "mfa_disable" };
        if !passed {
            self.audit.record(
                &AuditEvent::failed(now, op, MfaError::MfaValidation.code()).subject(user_id),
            );
            return Err(MfaError::MfaValidation);
        }
        self.audit.record(&AuditEvent::ok(now, op).subject(user_id));
        Ok(ToggleOutcome {
            enabled: enable,
            backup_codes: codes.map(|(plain, _)| plain),
        })
    }

    /// Opens a login challenge bound to one MFA_REQUEST token. `channel`
    /// differs from the user's setting only when risk forces email MFA.
    pub fn begin_login(
        &self,
        user_id: &str,
        channel: MfaType,
        token_jti: Uuid,
    ) -> Result<(), MfaError> {
        let email = self.email_of(user_id)?;
        let now = self.clock.now();
        let mut record = self
            .record(user_id)
            .unwrap_or_else(|| MfaRecord::disabled(user_id));
        let otp = (channel == MfaType::Email).then(generate_otp);
        record.otp = otp;
        record.challenge = Some(MfaChallenge {
            purpose: ChallengePurpose::Login { token_jti },
            mfa_type: channel,
            issued_at: now,
            attempts: 0,
            pending_secret: None,
        });
        self.store.write(|t| t.put_mfa(record))?;
        if let Some(code) = otp {
            self.mail_code(email, code)?;
        }
        Ok(())
    }

    /// Accepts the challenge code, or an unused backup code when MFA is
    /// enabled. A backup code is consumed by the same transaction that
    /// closes the challenge.
    pub fn verify_login(&self, user_id: &str, token_jti: Uuid, code: &str) -> Result<(), MfaError> {
        let now = self.clock.now();
        let Some(record) = self.record(user_id) else {
            return Err(MfaError::MfaValidation);
        };
        let bound = matches!(
            record.challenge,
            Some(MfaChallenge { purpose: ChallengePurpose::Login { token_jti: j }, .. }) if j == token_jti
        );
        if !bound {
            return Err(MfaError::MfaValidation);
        }

        let backup_hash = if record.enabled && looks_like_backup_code(code) {
            record
                .backup_codes
                .iter()
                .find(|h| self.hasher.verify(code, h))
                .cloned()
        } else {
            None
        };

        let passed = self.store.write(|t| {
            let mut record = t.mfa(user_id).cloned().ok_or(MfaError::MfaValidation)?;
            let still_bound = matches!(
                record.challenge,
                Some(MfaChallenge { purpose: ChallengePurpose::Login { token_jti: j }, .. }) if j == token_jti
            );
            if !still_bound {
                return Ok(false);
            }
            let passed = match &backup_hash {
                Some(h) => match record.backup_codes.iter().position(|c| c == h) {
                    Some(i) => {
                        record.backup_codes.remove(i);
                        true
                    }
                    None => false,
                },
                None => matches!(self.check_code(&mut record, code, now), Check::Pass),
            };
            if passed {
                record.challenge = None;
                record.otp = None;
            }
            t.put_mfa(record)?;
            Ok::<_, MfaError>(passed)
        })?;
        if passed {
            if backup_hash.is_some() {
                self.audit
                    .record(&AuditEvent::ok(now, "backup_code_used").subject(user_id));
            }
            Ok(())
        } else {
            Err(MfaError::MfaValidation)
        }
    }
}
