//! Policy decision, information, and administration points.
//!
//! A permission is identified by (module, action). The decision permits a
//! request only when the subject belongs to a group holding that permission
//! and every check on the permission passes; anything else denies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audit::AuditLog;
use crate::clock::SharedClock;
use crate::model::{Id, Permission, PermissionRole, Resource, Role, UserStatus};
use crate::store::{Store, StoreError, Tables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Permit,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    NoGrant,
    AppNotAllowed,
    RoleMismatch,
    PermissionDisabled,
    TagMismatch,
    Internal,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::NoGrant => "NO_GRANT",
            ReasonCode::AppNotAllowed => "APP_NOT_ALLOWED",
            ReasonCode::RoleMismatch => "ROLE_MISMATCH",
            ReasonCode::PermissionDisabled => "PERMISSION_DISABLED",
            ReasonCode::TagMismatch => "TAG_MISMATCH",
            ReasonCode::Internal => "INTERNAL",
        }
    }
}

impl std::fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessRequest {
    /// User id of the authenticated subject.
    pub subject: Id,
    pub resource_kind: String,
    pub action: String,
    pub app: String,
    #[serde(default)]
    pub context: BTreeMap<String, Value>,
}

impl AccessRequest {
    pub fn new(
        subject: impl Into<Id>,
        resource_kind: impl Into<String>,
        action: impl Into<String>,
        app: impl Into<String>,
    ) -> Self {
        Self {
            subject: subject.into(),
            resource_kind: resource_kind.into(),
            action: action.into(),
            app: app.into(),
            context: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub effect: Effect,
    pub reason_code: Option<ReasonCode>,
    /// Lowercase union of the subject's grant tags for the permission.
    pub tags: BTreeSet<String>,
    pub allow_untagged: bool,
    /// Masters whose groups supplied the grant.
    pub masters: BTreeSet<Id>,
    pub store_version: u64,
}

impl Decision {
    fn deny(reason: ReasonCode, store_version: u64) -> Self {
        Self {
            effect: Effect::Deny,
            reason_code: Some(reason),
            tags: BTreeSet::new(),
            allow_untagged: false,
            masters: BTreeSet::new(),
            store_version,
        }
    }

    pub fn is_permit(&self) -> bool {
        self.effect == Effect::Permit
    }

    /// Whether a resource with `tags` survives filtering under this decision.
    pub fn admits(&self, tags: &[String]) -> bool {
        self.is_permit() && tag_visible(tags, &self.tags, self.allow_untagged)
    }
}

/// One group's grant of a permission to the subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Grant {
    pub group_id: Id,
    pub permission_id: Id,
    pub master_id: Id,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubjectAttributes {
    pub user_id: Id,
    pub role: Role,
    pub status: UserStatus,
    pub master_id: Id,
    pub group_ids: BTreeSet<Id>,
    pub grants: Vec<Grant>,
    /// Union of tags over every grant.
    pub combined_tags: BTreeSet<String>,
}

impl SubjectAttributes {
    pub fn grants_for<'a>(&'a self, permission_id: &'a str) -> impl Iterator<Item = &'a Grant> {
        self.grants
            .iter()
            .filter(move |g| g.permission_id == permission_id)
    }

    fn from_tables(t: &Tables, user_id: &str) -> Option<Self> {
        let user = t.user(user_id)?;
        let group_ids: BTreeSet<Id> = t.groups_of(user_id).map(|g| g.id.clone()).collect();
        let grants: Vec<Grant> = group_ids
            .iter()
            .flat_map(|g| t.group_permissions_of(g))
            .map(|gp| Grant {
                group_id: gp.group_id.clone(),
                permission_id: gp.permission_id.clone(),
                master_id: gp.master_id.clone(),
                tags: gp.tags.clone(),
            })
            .collect();
        let combined_tags = grants
            .iter()
            .flat_map(|g| g.tags.iter().map(|t| t.to_lowercase()))
            .collect();
        Some(Self {
            user_id: user.id.clone(),
            role: user.role,
            status: user.status,
            master_id: user.master_id.clone(),
            group_ids,
            grants,
            combined_tags,
        })
    }
}

/// OR semantics: any shared tag admits the resource. Untagged resources
/// pass only when the permission allows them.
pub fn tag_visible(
    resource_tags: &[String],
    subject_tags: &BTreeSet<String>,
    allow_untagged: bool,
) -> bool {
    if resource_tags.iter().all(|t| t.trim().is_empty()) {
        return allow_untagged;
    }
    resource_tags
        .iter()
        .any(|t| subject_tags.contains(&t.trim().to_lowercase()))
}

pub fn filter_resources(resources: Vec<Resource>, decision: &Decision) -> Vec<Resource> {
    resources
        .into_iter()
        .filter(|r| decision.admits(&r.tags))
        .collect()
}

fn default_true() -> bool {
    true
}

/// A policy document is a permission catalog entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    pub module: String,
    pub action: String,
    pub apps: Vec<String>,
    pub role: PermissionRole,
    pub enabled: bool,
    #[serde(default = "default_true")]
    pub allow_untagged: bool,
}

impl PolicyDocument {
    pub fn into_permission(self) -> Permission {
        Permission {
            id: String::new(),
            module: self.module.trim().to_string(),
            action: self.action.trim().to_string(),
            apps: self.apps,
            role: self.role,
            enabled: self.enabled,
            allow_untagged: self.allow_untagged,
        }
    }

    fn check(&self) -> Result<(), PolicyError> {
        if self.module.trim().is_empty() || self.action.trim().is_empty() {
            return Err(PolicyError::Parse(
                "module and action must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// Parses one document or an array of them.
pub fn parse_policy_documents(json: &str) -> Result<Vec<PolicyDocument>, PolicyError> {
    let value: Value = serde_json::from_str(json).map_err(|e| PolicyError::Parse(e.to_string()))?;
    let docs: Vec<PolicyDocument> = match value {
        Value::Array(_) => serde_json::from_value(value),
        other => serde_json::from_value(other).map(|d| vec![d]),
    }
    .map_err(|e| PolicyError::Parse(e.to_string()))?;
    docs.iter().try_for_each(PolicyDocument::check)?;
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("unknown subject")]
    UnknownSubject,
    #[error("policy document malformed: {0}")]
    Parse(String),
    #[error("storage: {0}")]
    Storage(#[from] StoreError),
}

/// Decision audit line.
#[derive(Debug, Clone, Serialize)]
pub struct DecisionRecord<'a> {
    pub time: DateTime<Utc>,
    pub subject: &'a str,
    pub resource_kind: &'a str,
    pub action: &'a str,
    pub app: &'a str,
    pub effect: Effect,
    pub reason_code: Option<ReasonCode>,
    pub tags: &'a BTreeSet<String>,
    pub store_version: u64,
}

struct CacheEntry {
    version: u64,
    fetched: DateTime<Utc>,
    attrs: Arc<SubjectAttributes>,
}

pub struct PolicyEngine {
    store: Arc<Store>,
    clock: SharedClock,
    decisions: AuditLog,
    cache_ttl: Option<Duration>,
    cache: Mutex<HashMap<Id, CacheEntry>>,
}

impl PolicyEngine {
    /// `cache_ttl` of `None` disables the attribute cache.
    pub fn new(
        store: Arc<Store>,
        clock: SharedClock,
        decisions: AuditLog,
        cache_ttl: Option<Duration>,
    ) -> Self {
        Self {
            store,
            clock,
            decisions,
            cache_ttl,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Cached entries are reused only for the store version they were read
    /// at, so a hit always equals a fresh read.
    fn attributes_in(&self, t: &Tables, user_id: &str) -> Option<Arc<SubjectAttributes>> {
        let version = t.policy_version();
        let now = self.clock.now();
        if let Some(ttl) = self.cache_ttl {
            if let Some(e) = self.cache.lock().get(user_id) {
                if e.version == version && now - e.fetched < ttl {
                    return Some(e.attrs.clone());
                }
            }
        }
        let attrs = Arc::new(SubjectAttributes::from_tables(t, user_id)?);
        if self.cache_ttl.is_some() {
            self.cache.lock().insert(
                user_id.to_string(),
                CacheEntry {
                    version,
                    fetched: now,
                    attrs: attrs.clone(),
                },
            );
        }
        Some(attrs)
    }

    pub fn collect_attributes(&self, user_id: &str) -> Result<SubjectAttributes, PolicyError> {
        self.store
            .read(|t| self.attributes_in(t, user_id))
            .map(|a| (*a).clone())
            .ok_or(PolicyError::UnknownSubject)
    }

    /// Evaluates against a single consistent read of the store.
    pub fn decide(&self, req: &AccessRequest) -> Decision {
        let decision = self.store.read(|t| self.evaluate(t, req));
        self.decisions.record(&DecisionRecord {
            time: self.clock.now(),
            subject: &req.subject,
            resource_kind: &req.resource_kind,
            action: &req.action,
            app: &req.app,
            effect: decision.effect,
            reason_code: decision.reason_code,
            tags: &decision.tags,
            store_version: decision.store_version,
        });
        decision
    }

    fn evaluate(&self, t: &Tables, req: &AccessRequest) -> Decision {
        let version = t.policy_version();
        let fields = [&req.subject, &req.resource_kind, &req.action, &req.app];
        if fields.iter().any(|f| f.trim().is_empty()) {
            return Decision::deny(ReasonCode::Internal, version);
        }
        let Some(attrs) = self.attributes_in(t, &req.subject) else {
            return Decision::deny(ReasonCode::Internal, version);
        };
        if attrs.status != UserStatus::Active {
            return Decision::deny(ReasonCode::NoGrant, version);
        }
        let Some(p) = t.permission_by(&req.resource_kind, &req.action) else {
            return Decision::deny(ReasonCode::NoGrant, version);
        };
        let grants: Vec<&Grant> = attrs.grants_for(&p.id).collect();
        if grants.is_empty() {
            return Decision::deny(ReasonCode::NoGrant, version);
        }
        if !p.enabled {
            return Decision::deny(ReasonCode::PermissionDisabled, version);
        }
        if !p.apps.iter().any(|a| a == &req.app) {
            return Decision::deny(ReasonCode::AppNotAllowed, version);
        }
        if p.role == PermissionRole::Admin && attrs.role != Role::Admin {
            return Decision::deny(ReasonCode::RoleMismatch, version);
        }
        Decision {
            effect: Effect::Permit,
            reason_code: None,
            tags: grants
                .iter()
                .flat_map(|g| g.tags.iter().map(|t| t.to_lowercase()))
                .collect(),
            allow_untagged: p.allow_untagged,
            masters: grants.iter().map(|g| g.master_id.clone()).collect(),
            store_version: version,
        }
    }

    /// Upserts a policy by (module, action). Returns its id and the new
    /// store version.
    pub fn store_policy(&self, doc: PolicyDocument) -> Result<(Id, u64), PolicyError> {
        doc.check()?;
        let id = self
            .store
            .write(|t| t.upsert_permission(doc.into_permission()))?;
        Ok((id, self.store_version()))
    }

    pub fn fetch_policies(&self, resource_kind: &str) -> Vec<Permission> {
        self.store.read(|t| {
            t.permissions()
                .filter(|p| p.module == resource_kind)
                .cloned()
                .collect()
        })
    }

    pub fn store_version(&self) -> u64 {
        self.store.read(|t| t.policy_version())
    }
}
