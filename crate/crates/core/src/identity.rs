//! Identity lifecycle: registration, email verification, password reset,
//! profile and address management, federated JIT provisioning, and the
//! root-user bootstrap.
//!
//! The registration steps run in a fixed order and stop at the first
//! failure: validate, captcha, existence check, master, user and details,
//! token, mail.

use std::collections::BTreeMap;
use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::NaiveDate;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use parking_lot::RwLock;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use zeroize::Zeroize;

use crate::audit::{AuditEvent, AuditLog};
use crate::captcha::CaptchaVerifier;
use crate::clock::SharedClock;
use crate::mail::{MailClient, MailMessage, TEMPLATE_RESET_PASSWORD, TEMPLATE_VERIFY_EMAIL};
use crate::model::{new_id, Address, Id, Role, UserDetails, UserRecord, UserStatus};
use crate::password::PasswordHasher;
use crate::store::{Store, StoreError};
use crate::token::{TokenError, TokenService, TokenType};
use crate::validate::{self, Field};

/// Password hash for accounts that can only sign in through an IdP.
pub const FEDERATED_PASSWORD_HASH: &str = "!federated";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("invalid {0}")]
    Validation(Field),
    #[error("captcha rejected")]
    Captcha,
    #[error("a user with this email or phone already exists")]
    UserExists,
    #[error("token rejected: {0}")]
    TokenValidation(String),
    #[error("not authorized")]
    NotAuthorized,
    #[error("{0} is disabled")]
    OperationDisabled(&'static str),
    #[error("unknown user")]
    UnknownUser,
    #[error("unknown identity provider")]
    UnknownIdp,
    #[error("identity provider already registered")]
    DuplicateIdp,
    #[error("identity provider key unusable")]
    InvalidIdpKey,
    #[error("assertion signature invalid")]
    SignatureInvalid,
    #[error("assertion expired")]
    AssertionExpired,
    #[error("required claim {0} missing")]
    ClaimMapping(String),
    #[error("already bootstrapped")]
    AlreadyBootstrapped,
    #[error("storage: {0}")]
    Storage(StoreError),
    #[error("token issuance: {0}")]
    TokenIssuance(String),
    #[error("mail: {0}")]
    Mail(String),
    #[error("password hashing: {0}")]
    Hashing(String),
}

impl IdentityError {
    pub fn code(&self) -> &'static str {
        match self {
            IdentityError::Validation(_) => "VALIDATION_ERROR",
            IdentityError::Captcha => "CAPTCHA_ERROR",
            IdentityError::UserExists => "USER_EXISTS",
            IdentityError::TokenValidation(_) => "TOKEN_VALIDATION_ERROR",
            IdentityError::NotAuthorized => "NOT_AUTHORIZED",
            IdentityError::OperationDisabled(_) => "OPERATION_DISABLED",
            IdentityError::UnknownUser => "UNKNOWN_USER",
            IdentityError::UnknownIdp => "UNKNOWN_IDP",
            IdentityError::DuplicateIdp => "DUPLICATE_IDP",
            IdentityError::InvalidIdpKey => "INVALID_IDP_KEY",
            IdentityError::SignatureInvalid => "SIGNATURE_INVALID",
            IdentityError::AssertionExpired => "ASSERTION_EXPIRED",
            IdentityError::ClaimMapping(_) => "CLAIM_MAPPING_ERROR",
            IdentityError::AlreadyBootstrapped => "ALREADY_BOOTSTRAPPED",
            IdentityError::Storage(_)
            | IdentityError::TokenIssuance(_)
            | IdentityError::Mail(_)
            | IdentityError::Hashing(_) => "INTERNAL",
        }
    }

    pub fn field(&self) -> Option<Field> {
        match self {
            IdentityError::Validation(f) => Some(*f),
            _ => None,
        }
    }
}

impl From<StoreError> for IdentityError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::ConstraintViolation("user_details.email")
            | StoreError::ConstraintViolation("user_details.phone") => IdentityError::UserExists,
            StoreError::OperationDisabled(what) => IdentityError::OperationDisabled(what),
            other => IdentityError::Storage(other),
        }
    }
}

impl From<Field> for IdentityError {
    fn from(f: Field) -> Self {
        IdentityError::Validation(f)
    }
}

fn token_rejected(e: TokenError) -> IdentityError {
    IdentityError::TokenValidation(e.to_string())
}

#[derive(Clone, Deserialize)]
pub struct RegistrationInput {
    pub name: String,
    pub email: String,
    pub phone: String,
    pub password: String,
    /// `dd/mm/yyyy`
    pub dob: String,
    #[serde(default)]
    pub captcha_response: Option<String>,
}

impl std::fmt::Debug for RegistrationInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistrationInput")
            .field("name", &self.name)
            .field("email", &self.email)
            .field("phone", &self.phone)
            .field("dob", &self.dob)
            .finish_non_exhaustive()
    }
}

impl Drop for RegistrationInput {
    fn drop(&mut self) {
        self.password.zeroize();
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Registered {
    pub user_id: Id,
    pub master_id: Id,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ProfileUpdate {
    pub name: Option<String>,
    pub phone: Option<String>,
    pub profile_image: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AddressInput {
    /// Present to edit an existing address, absent to add one.
    #[serde(default)]
    pub id: Option<Id>,
    pub lines: Vec<String>,
    pub city: String,
    pub country: String,
}

/// What a profile read returns; never includes the password hash or OTP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Profile {
    pub user_id: Id,
    pub master_id: Id,
    pub role: Role,
    pub status: UserStatus,
    pub name: String,
    pub email: String,
    pub phone: String,
    pub dob: Option<NaiveDate>,
    pub email_verified: bool,
    pub phone_verified: bool,
    pub profile_image: Option<String>,
    pub addresses: Vec<Address>,
}

/// Trusted identity provider for signed assertions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdpConfig {
    pub idp_id: String,
    /// Ed25519 public key, base64url without padding.
    pub verification_key: String,
    /// Master that JIT-provisioned users join.
    pub master_id: Id,
    /// Assertion claim name to user field (`email`, `name`, `phone`, `dob`).
    pub claim_mapping: BTreeMap<String, String>,
}

/// Signs a claim set as `payload.signature`; what an IdP would send.
pub fn sign_assertion(key: &SigningKey, claims: &serde_json::Value) -> String {
    let payload = URL_SAFE_NO_PAD.encode(claims.to_string());
    let sig = key.sign(payload.as_bytes());
    format!("{payload}.{}", URL_SAFE_NO_PAD.encode(sig.to_bytes()))
}

pub fn encode_verifying_key(key: &VerifyingKey) -> String {
    URL_SAFE_NO_PAD.encode(key.to_bytes())
}

fn decode_verifying_key(s: &str) -> Option<VerifyingKey> {
    let bytes: [u8; 32] = URL_SAFE_NO_PAD.decode(s).ok()?.try_into().ok()?;
    VerifyingKey::from_bytes(&bytes).ok()
}

pub fn generate_otp() -> u32 {
    rand::rngs::OsRng.gen_range(0..1_000_000)
}

pub struct IdentityService {
    store: Arc<Store>,
    tokens: Arc<TokenService>,
    mail: Arc<dyn MailClient>,
    captcha: Arc<dyn CaptchaVerifier>,
    hasher: Arc<dyn PasswordHasher>,
    clock: SharedClock,
    audit: AuditLog,
    base_url: String,
    idps: RwLock<BTreeMap<String, (IdpConfig, VerifyingKey)>>,
}

impl IdentityService {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: Arc<Store>,
        tokens: Arc<TokenService>,
        mail: Arc<dyn MailClient>,
        captcha: Arc<dyn CaptchaVerifier>,
        hasher: Arc<dyn PasswordHasher>,
        clock: SharedClock,
        audit: AuditLog,
        base_url: impl Into<String>,
    ) -> Self {
        Self {
            store,
            tokens,
            mail,
            captcha,
            hasher,
            clock,
            audit,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            idps: RwLock::new(BTreeMap::new()),
        }
    }

    fn link(&self, path: &str, token: &str) -> String {
        format!("{}{path}?token={token}", self.base_url)
    }

    pub fn register_user(
        &self,
        input: RegistrationInput,
        captcha_enabled: bool,
    ) -> Result<Registered, IdentityError> {
        let today = self.clock.now().date_naive();
        validate::name(&input.name)?;
        let email = validate::normalize_email(&input.email);
        validate::email(&email)?;
        validate::phone(&input.phone)?;
        validate::password(&input.password)?;
        let dob = validate::dob(&input.dob, today)?;

        if captcha_enabled && !self.captcha.verify(input.captcha_response.as_deref()) {
            return Err(IdentityError::Captcha);
        }

        let exists = self.store.read(|t| {
            t.details_by_email(&email).is_some() || t.details_by_phone(&input.phone).is_some()
        });
        if exists {
            return Err(IdentityError::UserExists);
        }

        let master = self.store.create_master(self.clock.now())?;

        let password_hash = self
            .hasher
            .hash(&input.password)
            .map_err(|e| IdentityError::Hashing(e.to_string()))?;
        let otp = generate_otp();
        let user = UserRecord::member(&master.id);
        let details = UserDetails {
            id: new_id(),
            user_id: user.id.clone(),
            name: input.name.trim().to_string(),
            email: email.clone(),
            phone: input.phone.clone(),
            password_hash,
            dob: Some(dob),
            email_verified: false,
            phone_verified: false,
            profile_image: None,
            otp: Some(otp),
        };
        self.store.write(|t| {
            t.insert_user(user.clone())?;
            t.insert_user_details(details)
        })?;

        let token = self
            .tokens
            .issue(&user.id, TokenType::VerifyEmail, Some(otp))
            .map_err(|e| IdentityError::TokenIssuance(e.to_string()))?;

        self.mail
            .send(&MailMessage {
                to: email,
                template_id: TEMPLATE_VERIFY_EMAIL.into(),
                link: Some(self.link("/verify-email", &token)),
                code: None,
            })
            .map_err(|e| IdentityError::Mail(e.to_string()))?;

        self.audit.record(
            &AuditEvent::ok(self.clock.now(), "register")
                .subject(&user.id)
                .detail(json!({ "master_id": master.id })),
        );
        Ok(Registered {
            user_id: user.id,
            master_id: master.id,
        })
    }

    /// Re-sends the verification link with a fresh OTP.
    pub fn request_email_verification(&self, email: &str) -> Result<(), IdentityError> {
        let email = validate::normalize_email(email);
        validate::email(&email)?;
        let Some(user_id) = self
            .store
            .read(|t| t.details_by_email(&email).map(|d| d.user_id.clone()))
        else {
            return Ok(());
        };
        let otp = self.store_fresh_otp(&user_id)?;
        let token = self
            .tokens
            .issue(&user_id, TokenType::VerifyEmail, Some(otp))
            .map_err(|e| IdentityError::TokenIssuance(e.to_string()))?;
        self.mail
            .send(&MailMessage {
                to: email,
                template_id: TEMPLATE_VERIFY_EMAIL.into(),
                link: Some(self.link("/verify-email", &token)),
                code: None,
            })
            .map_err(|e| IdentityError::Mail(e.to_string()))
    }

    fn store_fresh_otp(&self, user_id: &str) -> Result<u32, IdentityError> {
        let otp = generate_otp();
        self.store.write(|t| {
            let mut d = t
                .details_for_user(user_id)
                .cloned()
                .ok_or(IdentityError::UnknownUser)?;
            d.otp = Some(otp);
            t.update_user_details(d)?;
            Ok::<_, IdentityError>(())
        })?;
        Ok(otp)
    }

    /// Consumes a token's OTP: it must equal the stored one, which is then
    /// nulled in the same transaction as `apply`.
    fn consume_otp(
        &self,
        user_id: &str,
        otp: Option<u32>,
        apply: impl FnOnce(&mut UserDetails),
    ) -> Result<(), IdentityError> {
        self.store.write(|t| {
            let mut d = t
                .details_for_user(user_id)
                .cloned()
                .ok_or_else(|| IdentityError::TokenValidation("unknown user".into()))?;
            match (d.otp, otp) {
                (Some(stored), Some(given)) if stored == given => {}
                _ => return Err(IdentityError::TokenValidation("otp mismatch".into())),
            }
            apply(&mut d);
            d.otp = None;
            t.update_user_details(d)?;
            Ok(())
        })
    }

    pub fn verify_email(&self, token: &str) -> Result<(), IdentityError> {
        let claims = self
            .tokens
            .validate(token, TokenType::VerifyEmail)
            .map_err(token_rejected)?;
        self.consume_otp(&claims.user_id, claims.otp, |d| d.email_verified = true)?;
        self.audit
            .record(&AuditEvent::ok(self.clock.now(), "verify_email").subject(&claims.user_id));
        Ok(())
    }

    /// Always answers the same way for well-formed input, whether or not
    /// the account exists.
    pub fn request_password_reset(&self, email: &str, dob: &str) -> Result<(), IdentityError> {
        let email = validate::normalize_email(email);
        validate::email(&email)?;
        if !dob.is_ascii() || dob.len() != 10 {
            return Err(IdentityError::Validation(Field::Dob));
        }
        let dob = NaiveDate::parse_from_str(dob, "%d/%m/%Y")
            .map_err(|_| IdentityError::Validation(Field::Dob))?;

        let user_id = self.store.read(|t| {
            t.details_by_email(&email)
                .filter(|d| d.dob == Some(dob))
                .map(|d| d.user_id.clone())
        });
        let Some(user_id) = user_id else {
            return Ok(());
        };
        if let Err(e) = self.send_reset_link(&user_id, &email) {
            tracing::error!(error = %e, "password reset mail not sent");
            return Ok(());
        }
        self.audit.record(
            &AuditEvent::ok(self.clock.now(), "password_reset_requested").subject(&user_id),
        );
        Ok(())
    }

    fn send_reset_link(&self, user_id: &str, email: &str) -> Result<(), IdentityError> {
        let otp = self.store_fresh_otp(user_id)?;
        let token = self
            .tokens
            .issue(user_id, TokenType::ForgotPassword, Some(otp))
            .map_err(|e| IdentityError::TokenIssuance(e.to_string()))?;
        self.mail
            .send(&MailMessage {
                to: email.to_string(),
                template_id: TEMPLATE_RESET_PASSWORD.into(),
                link: Some(self.link("/reset-password", &token)),
                code: None,
            })
            .map_err(|e| IdentityError::Mail(e.to_string()))
    }

    pub fn reset_password(&self, token: &str, new_password: &str) -> Result<(), IdentityError> {
        validate::password(new_password)?;
        let claims = self
            .tokens
            .validate(token, TokenType::ForgotPassword)
            .map_err(token_rejected)?;
        let hash = self
            .hasher
            .hash(new_password)
            .map_err(|e| IdentityError::Hashing(e.to_string()))?;
        self.consume_otp(&claims.user_id, claims.otp, |d| d.password_hash = hash)?;
        self.audit
            .record(&AuditEvent::ok(self.clock.now(), "password_reset").subject(&claims.user_id));
        Ok(())
    }

    /// The actor may edit themselves; admins may edit users of their master.
    fn authorize_for(&self, actor_id: &str, target_id: &str) -> Result<(), IdentityError> {
        self.store.read(|t| {
            let target = t.user(target_id).ok_or(IdentityError::UnknownUser)?;
            if actor_id == target_id {
                return Ok(());
            }
            match t.user(actor_id) {
                Some(a) if a.role == Role::Admin && a.master_id == target.master_id => Ok(()),
                _ => Err(IdentityError::NotAuthorized),
            }
        })
    }

    pub fn profile(&self, actor_id: &str, user_id: &str) -> Result<Profile, IdentityError> {
        self.authorize_for(actor_id, user_id)?;
        self.store.read(|t| {
            let u = t.user(user_id).ok_or(IdentityError::UnknownUser)?;
            let d = t
                .details_for_user(user_id)
                .ok_or(IdentityError::UnknownUser)?;
            Ok(Profile {
                user_id: u.id.clone(),
                master_id: u.master_id.clone(),
                role: u.role,
                status: u.status,
                name: d.name.clone(),
                email: d.email.clone(),
                phone: d.phone.clone(),
                dob: d.dob,
                email_verified: d.email_verified,
                phone_verified: d.phone_verified,
                profile_image: d.profile_image.clone(),
                addresses: t.addresses_for(user_id).cloned().collect(),
            })
        })
    }

    pub fn update_profile(
        &self,
        actor_id: &str,
        user_id: &str,
        update: ProfileUpdate,
    ) -> Result<(), IdentityError> {
        self.authorize_for(actor_id, user_id)?;
        if let Some(name) = &update.name {
            validate::name(name)?;
        }
        if let Some(phone) = &update.phone {
            validate::phone(phone)?;
        }
        self.store.write(|t| {
            let mut d = t
                .details_for_user(user_id)
                .cloned()
                .ok_or(IdentityError::UnknownUser)?;
            if let Some(name) = update.name {
                d.name = name.trim().to_string();
            }
            if let Some(phone) = update.phone {
                if phone != d.phone {
                    d.phone = phone;
                    d.phone_verified = false;
                }
            }
            if let Some(image) = update.profile_image {
                d.profile_image = Some(image);
            }
            t.update_user_details(d)?;
            Ok::<_, IdentityError>(())
        })?;
        self.audit.record(
            &AuditEvent::ok(self.clock.now(), "profile_update")
                .actor(actor_id)
                .subject(user_id),
        );
        Ok(())
    }

    pub fn upsert_address(
        &self,
        actor_id: &str,
        user_id: &str,
        input: AddressInput,
    ) -> Result<Id, IdentityError> {
        self.authorize_for(actor_id, user_id)?;
        if input.lines.iter().all(|l| l.trim().is_empty())
            || input.city.trim().is_empty()
            || input.country.trim().is_empty()
        {
            return Err(IdentityError::Validation(Field::Address));
        }
        let address = Address {
            id: input.id.unwrap_or_else(new_id),
            user_id: user_id.to_string(),
            lines: input.lines,
            city: input.city,
            country: input.country,
        };
        let id = address.id.clone();
        self.store.write(|t| t.upsert_address(address))?;
        Ok(id)
    }

    pub fn delete_address(
        &self,
        actor_id: &str,
        user_id: &str,
        address_id: &str,
    ) -> Result<(), IdentityError> {
        self.authorize_for(actor_id, user_id)?;
        self.store.write(|t| t.delete_address(address_id))?;
        Ok(())
    }

    pub fn register_idp(&self, config: IdpConfig) -> Result<(), IdentityError> {
        let key =
            decode_verifying_key(&config.verification_key).ok_or(IdentityError::InvalidIdpKey)?;
        if self.store.read(|t| t.master(&config.master_id).is_none()) {
            return Err(IdentityError::Storage(StoreError::ForeignKeyViolation(
                "idp.master_id",
            )));
        }
        let mut idps = self.idps.write();
        if idps.contains_key(&config.idp_id) {
            return Err(IdentityError::DuplicateIdp);
        }
        idps.insert(config.idp_id.clone(), (config, key));
        Ok(())
    }

    /// Verifies an IdP assertion and returns the local user, provisioning
    /// one on first sight.
    pub fn verify_federated_assertion(
        &self,
        assertion: &str,
        idp_id: &str,
    ) -> Result<Id, IdentityError> {
        let (config, key) = self
            .idps
            .read()
            .get(idp_id)
            .cloned()
            .ok_or(IdentityError::UnknownIdp)?;
        let (payload, sig) = assertion
            .split_once('.')
            .ok_or(IdentityError::SignatureInvalid)?;
        let sig: [u8; 64] = URL_SAFE_NO_PAD
            .decode(sig)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or(IdentityError::SignatureInvalid)?;
        key.verify(payload.as_bytes(), &Signature::from_bytes(&sig))
            .map_err(|_| IdentityError::SignatureInvalid)?;
        let claims: serde_json::Map<String, serde_json::Value> = URL_SAFE_NO_PAD
            .decode(payload)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .ok_or(IdentityError::SignatureInvalid)?;
        if let Some(exp) = claims.get("exp").and_then(|v| v.as_i64()) {
            if self.clock.now().timestamp() >= exp {
                return Err(IdentityError::AssertionExpired);
            }
        }

        let mut fields: BTreeMap<&str, String> = BTreeMap::new();
        for (claim, field) in &config.claim_mapping {
            if let Some(v) = claims.get(claim).and_then(|v| v.as_str()) {
                fields.insert(field.as_str(), v.to_string());
            }
        }
        let email = fields
            .get("email")
            .map(|e| validate::normalize_email(e))
            .ok_or_else(|| IdentityError::ClaimMapping("email".into()))?;
        validate::email(&email).map_err(|_| IdentityError::ClaimMapping("email".into()))?;

        let existing = self.store.read(|t| {
            t.details_by_email(&email)
                .and_then(|d| t.user(&d.user_id))
                .map(|u| (u.id.clone(), u.master_id.clone()))
        });
        if let Some((user_id, master_id)) = existing {
            return if master_id == config.master_id {
                Ok(user_id)
            } else {
                Err(IdentityError::UserExists)
            };
        }

        let name = fields
            .get("name")
            .cloned()
            .ok_or_else(|| IdentityError::ClaimMapping("name".into()))?;
        let dob = fields
            .get("dob")
            .and_then(|s| NaiveDate::parse_from_str(s, "%d/%m/%Y").ok());
        let user = UserRecord::member(&config.master_id);
        let details = UserDetails {
            id: new_id(),
            user_id: user.id.clone(),
            name,
            email,
            phone: fields.get("phone").cloned().unwrap_or_default(),
            password_hash: FEDERATED_PASSWORD_HASH.into(),
            dob,
            email_verified: true,
            phone_verified: false,
            profile_image: None,
            otp: None,
        };
        self.store.write(|t| {
            t.insert_user(user.clone())?;
            t.insert_user_details(details)
        })?;
        self.audit.record(
            &AuditEvent::ok(self.clock.now(), "jit_provision")
                .subject(&user.id)
                .detail(json!({ "idp": idp_id })),
        );
        Ok(user.id)
    }

    /// Creates a master and its root administrator. Refuses when a root
    /// user already exists unless `force` is set.
    pub fn bootstrap(
        &self,
        email: &str,
        password: &str,
        force: bool,
    ) -> Result<Registered, IdentityError> {
        let email = validate::normalize_email(email);
        validate::email(&email)?;
        validate::password(password)?;
        if !force && self.store.read(|t| t.users().any(|u| u.is_root)) {
            return Err(IdentityError::AlreadyBootstrapped);
        }
        if self.store.read(|t| t.details_by_email(&email).is_some()) {
            return Err(IdentityError::UserExists);
        }
        let hash = self
            .hasher
            .hash(password)
            .map_err(|e| IdentityError::Hashing(e.to_string()))?;
        let now = self.clock.now();
        let master = crate::model::MasterRecord {
            id: new_id(),
            created_at: now,
        };
        let root = UserRecord {
            role: Role::Admin,
            is_root: true,
            ..UserRecord::member(&master.id)
        };
        let details = UserDetails {
            id: new_id(),
            user_id: root.id.clone(),
            name: "Root".into(),
            email,
            phone: String::new(),
            password_hash: hash,
            dob: None,
            email_verified: true,
            phone_verified: false,
            profile_image: None,
            otp: None,
        };
        self.store.write(|t| {
            t.insert_master(master.clone())?;
            t.insert_user(root.clone())?;
            t.insert_user_details(details)
        })?;
        self.audit.record(
            &AuditEvent::ok(now, "bootstrap")
                .subject(&root.id)
                .detail(json!({ "master_id": master.id })),
        );
        Ok(Registered {
            user_id: root.id,
            master_id: master.id,
        })
    }
}

/// Generates an IdP keypair; returns the signing key and the encoded
/// verification key for [`IdpConfig`].
pub fn generate_idp_key() -> (SigningKey, String) {
    let key = SigningKey::generate(&mut rand::rngs::OsRng);
    let public = encode_verifying_key(&key.verifying_key());
    (key, public)
}
