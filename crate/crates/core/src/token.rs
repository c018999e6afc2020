//! Typed tokens: compact `header.payload.signature`, base64url, HMAC-SHA256.
//!
//! Every payload carries a `type` discriminator so a token minted for one
//! flow never validates in another.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Duration, TimeZone, Utc};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use uuid::Uuid;

use crate::clock::SharedClock;

type HmacSha256 = Hmac<Sha256>;

const HEADER: &str = r#"{"alg":"HS256","typ":"JWT"}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenType {
    VerifyEmail,
    ForgotPassword,
    MfaRequest,
    Access,
    Refresh,
}

impl TokenType {
    pub const ALL: [TokenType; 5] = [
        TokenType::VerifyEmail,
        TokenType::ForgotPassword,
        TokenType::MfaRequest,
        TokenType::Access,
        TokenType::Refresh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenType::VerifyEmail => "VERIFY_EMAIL",
            TokenType::ForgotPassword => "FORGOT_PASSWORD",
            TokenType::MfaRequest => "MFA_REQUEST",
            TokenType::Access => "ACCESS",
            TokenType::Refresh => "REFRESH",
        }
    }
}

impl fmt::Display for TokenType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    #[serde(rename = "userId")]
    pub user_id: String,
    #[serde(rename = "type")]
    pub token_type: TokenType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub otp: Option<u32>,
    pub iat: i64,
    pub exp: i64,
    pub jti: Uuid,
    /// Unix seconds of the MFA completion that led to this ACCESS token.
    #[serde(rename = "mfaAt", default, skip_serializing_if = "Option::is_none")]
    pub mfa_at: Option<i64>,
}

impl Claims {
    pub fn issued_at(&self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.iat, 0).single().unwrap_or_default()
    }

    pub fn expires_at(&self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.exp, 0).single().unwrap_or_default()
    }

    pub fn mfa_verified_at(&self) -> Option<DateTime<Utc>> {
        self.mfa_at.and_then(|t| Utc.timestamp_opt(t, 0).single())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("malformed token")]
    Malformed,
    #[error("token signature invalid")]
    SignatureInvalid,
    #[error("token expired")]
    Expired,
    #[error("expected a {expected} token, got {found}")]
    WrongType {
        expected: TokenType,
        found: TokenType,
    },
    #[error("token revoked")]
    Revoked,
    #[error("token issuance failed: {0}")]
    Issuance(String),
}

impl TokenError {
    pub fn code(&self) -> &'static str {
        match self {
            TokenError::Malformed => "TOKEN_MALFORMED",
            TokenError::SignatureInvalid => "TOKEN_SIGNATURE_INVALID",
            TokenError::Expired => "TOKEN_EXPIRED",
            TokenError::WrongType { .. } => "TOKEN_WRONG_TYPE",
            TokenError::Revoked => "TOKEN_REVOKED",
            TokenError::Issuance(_) => "INTERNAL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTtls {
    pub verify_email_secs: i64,
    pub forgot_password_secs: i64,
    pub mfa_request_secs: i64,
    pub access_secs: i64,
    pub refresh_secs: i64,
}

impl Default for TokenTtls {
    fn default() -> Self {
        Self {
            verify_email_secs: 30 * 60,
            forgot_password_secs: 30 * 60,
            mfa_request_secs: 5 * 60,
            access_secs: 15 * 60,
            refresh_secs: 7 * 24 * 3600,
        }
    }
}

impl TokenTtls {
    pub fn for_type(&self, t: TokenType) -> Duration {
        Duration::seconds(match t {
            TokenType::VerifyEmail => self.verify_email_secs,
            TokenType::ForgotPassword => self.forgot_password_secs,
            TokenType::MfaRequest => self.mfa_request_secs,
            TokenType::Access => self.access_secs,
            TokenType::Refresh => self.refresh_secs,
        })
    }
}

pub struct TokenService {
    key: Vec<u8>,
    ttls: TokenTtls,
    clock: SharedClock,
    fail_next: AtomicBool,
}

impl fmt::Debug for TokenService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenService")
            .field("ttls", &self.ttls)
            .finish_non_exhaustive()
    }
}

impl TokenService {
    pub fn new(key: impl Into<Vec<u8>>, ttls: TokenTtls, clock: SharedClock) -> Self {
        Self {
            key: key.into(),
            ttls,
            clock,
            fail_next: AtomicBool::new(false),
        }
    }

    pub fn ttls(&self) -> &TokenTtls {
        &self.ttls
    }

    /// Makes the next issuance fail.
    pub fn inject_fault(&self) {
        self.fail_next.store(true, Ordering::SeqCst);
    }

    /// Issues a token with the configured TTL for its type.
    pub fn issue(
        &self,
        user_id: &str,
        token_type: TokenType,
        otp: Option<u32>,
    ) -> Result<String, TokenError> {
        self.issue_with_ttl(user_id, token_type, otp, self.ttls.for_type(token_type))
    }

    pub fn issue_with_ttl(
        &self,
        user_id: &str,
        token_type: TokenType,
        otp: Option<u32>,
        ttl: Duration,
    ) -> Result<String, TokenError> {
        let now = self.clock.now();
        self.sign(&Claims {
            user_id: user_id.to_string(),
            token_type,
            otp,
            iat: now.timestamp(),
            exp: (now + ttl).timestamp(),
            jti: Uuid::new_v4(),
            mfa_at: None,
        })
    }

    /// Issues a session token (ACCESS or REFRESH) carrying the time of the
    /// MFA completion behind it, if any.
    pub fn issue_session(
        &self,
        user_id: &str,
        token_type: TokenType,
        mfa_at: Option<DateTime<Utc>>,
    ) -> Result<String, TokenError> {
        let now = self.clock.now();
        self.sign(&Claims {
            user_id: user_id.to_string(),
            token_type,
            otp: None,
            iat: now.timestamp(),
            exp: (now + self.ttls.for_type(token_type)).timestamp(),
            jti: Uuid::new_v4(),
            mfa_at: mfa_at.map(|t| t.timestamp()),
        })
    }

    /// Signs arbitrary claims. `exp` must be after `iat`.
    pub fn sign(&self, claims: &Claims) -> Result<String, TokenError> {
        if self.fail_next.swap(false, Ordering::SeqCst) {
            return Err(TokenError::Issuance("injected fault".into()));
        }
        if claims.exp <= claims.iat {
            return Err(TokenError::Issuance("ttl must be positive".into()));
        }
        let payload =
            serde_json::to_vec(claims).map_err(|e| TokenError::Issuance(e.to_string()))?;
        let signing_input = format!(
            "{}.{}",
            URL_SAFE_NO_PAD.encode(HEADER),
            URL_SAFE_NO_PAD.encode(payload)
        );
        let sig = self.mac(signing_input.as_bytes()).finalize().into_bytes();
        Ok(format!("{signing_input}.{}", URL_SAFE_NO_PAD.encode(sig)))
    }

    fn mac(&self, data: &[u8]) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("hmac accepts any key length");
        mac.update(data);
        mac
    }

    /// Signature, then payload shape, then expiry, then type.
    pub fn validate(&self, token: &str, expected: TokenType) -> Result<Claims, TokenError> {
        let claims = self.decode_verified(token)?;
        if self.clock.now().timestamp() >= claims.exp {
            return Err(TokenError::Expired);
        }
        if claims.token_type != expected {
            return Err(TokenError::WrongType {
                expected,
                found: claims.token_type,
            });
        }
        Ok(claims)
    }

    fn decode_verified(&self, token: &str) -> Result<Claims, TokenError> {
        let mut parts = token.split('.');
        let (Some(header), Some(payload), Some(sig), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(TokenError::Malformed);
        };
        let sig = URL_SAFE_NO_PAD
            .decode(sig)
            .map_err(|_| TokenError::SignatureInvalid)?;
        let signing_input = &token[..header.len() + 1 + payload.len()];
        self.mac(signing_input.as_bytes())
            .verify_slice(&sig)
            .map_err(|_| TokenError::SignatureInvalid)?;
        let header = URL_SAFE_NO_PAD
            .decode(header)
            .map_err(|_| TokenError::Malformed)?;
        let header: serde_json::Value =
            serde_json::from_slice(&header).map_err(|_| TokenError::Malformed)?;
        if header.get("alg").and_then(|a| a.as_str()) != Some("HS256") {
            return Err(TokenError::Malformed);
        }
        let payload = URL_SAFE_NO_PAD
            .decode(payload)
            .map_err(|_| TokenError::Malformed)?;
        serde_json::from_slice(&payload).map_err(|_| TokenError::Malformed)
    }
}

/// Decodes the payload without checking anything. For display and tests.
pub fn peek_claims(token: &str) -> Option<serde_json::Value> {
    let payload = token.split('.').nth(1)?;
    serde_json::from_slice(&URL_SAFE_NO_PAD.decode(payload).ok()?).ok()
}
