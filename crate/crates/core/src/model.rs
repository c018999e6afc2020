//! Record types for the identity, RBAC, and resource tables.

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

pub type Id = String;

pub fn new_id() -> Id {
    Uuid::new_v4().to_string()
}

/// Lowercases, trims, drops empties, and deduplicates while keeping order.
pub fn normalize_tags<I, S>(tags: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out: Vec<String> = Vec::new();
    for tag in tags {
        let t = tag.as_ref().trim().to_lowercase();
        if !t.is_empty() && !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterRecord {
    pub id: Id,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Admin,
    #[default]
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UserStatus {
    #[default]
    Active,
    Inactive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: Id,
    pub master_id: Id,
    pub role: Role,
    pub status: UserStatus,
    pub is_root: bool,
}

impl UserRecord {
    /// A regular member: role USER, status ACTIVE, not root.
    pub fn member(master_id: impl Into<Id>) -> Self {
        Self {
            id: new_id(),
            master_id: master_id.into(),
            role: Role::User,
            status: UserStatus::Active,
            is_root: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDetails {
    pub id: Id,
    pub user_id: Id,
    pub name: String,
    pub email: String,
    pub phone: String,
    pub password_hash: String,
    /// Absent only for federated users whose IdP asserts no birth date.
    pub dob: Option<NaiveDate>,
    pub email_verified: bool,
    pub phone_verified: bool,
    pub profile_image: Option<String>,
    pub otp: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Address {
    pub id: Id,
    pub user_id: Id,
    pub lines: Vec<String>,
    pub city: String,
    pub country: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub id: Id,
    pub name: String,
    pub master_id: Id,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupMember {
    pub group_id: Id,
    pub user_id: Id,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermissionRole {
    Admin,
    User,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permission {
    pub id: Id,
    pub module: String,
    pub action: String,
    pub apps: Vec<String>,
    pub role: PermissionRole,
    pub enabled: bool,
    /// Whether resources without tags survive filtering after a permit.
    #[serde(default = "default_true")]
    pub allow_untagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPermission {
    pub id: Id,
    pub group_id: Id,
    pub permission_id: Id,
    pub master_id: Id,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub id: Id,
    pub master_id: Id,
    pub kind: String,
    pub tags: Vec<String>,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MfaType {
    Email,
    Totp,
}

impl std::str::FromStr for MfaType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "EMAIL" => Ok(MfaType::Email),
            "TOTP" | "GOOGLE" | "GOOGLE_AUTHENTICATOR" => Ok(MfaType::Totp),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengePurpose {
    /// Second factor of a login, bound to one MFA_REQUEST token.
    Login { token_jti: uuid::Uuid },
    /// Pending enable/disable request.
    Toggle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MfaChallenge {
    pub purpose: ChallengePurpose,
    pub mfa_type: MfaType,
    pub issued_at: DateTime<Utc>,
    pub attempts: u32,
    /// Freshly generated TOTP secret awaiting confirmation.
    pub pending_secret: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MfaRecord {
    pub user_id: Id,
    pub mfa_type: MfaType,
    pub enabled: bool,
    pub otp: Option<u32>,
    /// Base32 TOTP secret.
    pub totp_secret: Option<String>,
    /// Adaptive hashes of the unused backup codes.
    pub backup_codes: Vec<String>,
    pub challenge: Option<MfaChallenge>,
}

impl MfaRecord {
    pub fn disabled(user_id: impl Into<Id>) -> Self {
        Self {
            user_id: user_id.into(),
            mfa_type: MfaType::Email,
            enabled: false,
            otp: None,
            totp_secret: None,
            backup_codes: Vec::new(),
            challenge: None,
        }
    }
}
