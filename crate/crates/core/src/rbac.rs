//! Group, membership, and grant administration, plus the permission catalog.
//!
//! Admins (including the root user) manage groups and memberships of their
//! own master only; members may come from any master. Granting a
//! permission to a group requires membership in the group's master, and a
//! USER-role actor may grant only user-role permissions.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::{AuditEvent, AuditLog};
use crate::clock::SharedClock;
use crate::model::{
    new_id, Group, GroupMember, GroupPermission, Id, PermissionRole, Role, UserStatus,
};
use crate::policy::{parse_policy_documents, PolicyError};
use crate::store::{Store, StoreError};
use crate::validate::Field;

/// Who is acting. Always resolved from a validated token's subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Actor {
    pub user_id: Id,
    pub role: Role,
    pub master_id: Id,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RbacError {
    #[error("invalid {0}")]
    Validation(Field),
    #[error("not authorized")]
    Authorization,
    #[error("group still has members")]
    MembersPresent,
    #[error("group still has permissions")]
    PermissionsPresent,
    #[error("constraint violated: {0}")]
    ConstraintViolation(&'static str),
    #[error("catalog malformed: {0}")]
    Parse(String),
    #[error("catalog lists {module}/{action} more than once")]
    DuplicateInCatalog { module: String, action: String },
    #[error("storage: {0}")]
    Storage(StoreError),
}

impl RbacError {
    pub fn code(&self) -> &'static str {
        match self {
            RbacError::Validation(_) => "VALIDATION_ERROR",
            RbacError::Authorization => "AUTHORIZATION_ERROR",
            RbacError::MembersPresent => "MEMBERS_PRESENT",
            RbacError::PermissionsPresent => "PERMISSIONS_PRESENT",
            RbacError::ConstraintViolation(_) => "CONSTRAINT_VIOLATION",
            RbacError::Parse(_) => "PARSE_ERROR",
            RbacError::DuplicateInCatalog { .. } => "DUPLICATE_IN_CATALOG",
            RbacError::Storage(_) => "INTERNAL",
        }
    }

    pub fn field(&self) -> Option<Field> {
        match self {
            RbacError::Validation(f) => Some(*f),
            _ => None,
        }
    }
}

impl From<StoreError> for RbacError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::ConstraintViolation(c) => RbacError::ConstraintViolation(c),
            other => RbacError::Storage(other),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupView {
    pub group: Group,
    pub members: Vec<Id>,
    pub permissions: Vec<GroupPermission>,
}

pub struct RbacService {
    store: Arc<Store>,
    clock: SharedClock,
    audit: AuditLog,
}

impl RbacService {
    pub fn new(store: Arc<Store>, clock: SharedClock, audit: AuditLog) -> Self {
        Self {
            store,
            clock,
            audit,
        }
    }

    /// Resolves an active user into an actor.
    pub fn actor(&self, user_id: &str) -> Result<Actor, RbacError> {
        self.store.read(|t| match t.user(user_id) {
            Some(u) if u.status == UserStatus::Active => Ok(Actor {
                user_id: u.id.clone(),
                role: u.role,
                master_id: u.master_id.clone(),
            }),
            _ => Err(RbacError::Authorization),
        })
    }

    fn admin_of(actor: &Actor, master_id: &str) -> Result<(), RbacError> {
        if actor.role == Role::Admin && actor.master_id == master_id {
            Ok(())
        } else {
            Err(RbacError::Authorization)
        }
    }

    fn group_in(&self, group_id: &str, master_id: &str) -> Result<Group, RbacError> {
        self.store
            .read(|t| {
                t.group(group_id)
                    .filter(|g| g.master_id == master_id)
                    .cloned()
            })
            .ok_or(RbacError::Validation(Field::GroupId))
    }

    fn record(&self, op: &'static str, actor: &Actor, detail: serde_json::Value) {
        self.audit.record(
            &AuditEvent::ok(self.clock.now(), op)
                .actor(&actor.user_id)
                .detail(detail),
        );
    }

    /// Creates a group, or renames `group_id` when given.
    pub fn upsert_group(
        &self,
        name: &str,
        master_id: &str,
        actor: &Actor,
        group_id: Option<&str>,
    ) -> Result<Group, RbacError> {
        let name = name.trim();
        if name.is_empty() || name.chars().count() > 100 {
            return Err(RbacError::Validation(Field::Name));
        }
        if master_id.trim().is_empty() {
            return Err(RbacError::Validation(Field::MasterId));
        }
        Self::admin_of(actor, master_id)?;
        let group = match group_id {
            Some(id) => {
                let mut g = self.group_in(id, master_id)?;
                g.name = name.to_string();
                self.store.write(|t| t.rename_group(id, name))?;
                g
            }
            None => {
                let g = Group {
                    id: new_id(),
                    name: name.to_string(),
                    master_id: master_id.to_string(),
                };
                self.store.write(|t| t.insert_group(g.clone()))?;
                g
            }
        };
        self.record(
            "group_upsert",
            actor,
            json!({ "group_id": group.id, "name": group.name }),
        );
        Ok(group)
    }

    /// Deletes an empty group. Members are checked before permissions.
    pub fn delete_group(
        &self,
        group_id: &str,
        master_id: &str,
        actor: &Actor,
    ) -> Result<(), RbacError> {
        Self::admin_of(actor, master_id)?;
        self.group_in(group_id, master_id)?;
        self.store.write(|t| {
            if t.members_of(group_id).next().is_some() {
                return Err(RbacError::MembersPresent);
            }
            if t.group_permissions_of(group_id).next().is_some() {
                return Err(RbacError::PermissionsPresent);
            }
            t.delete_group(group_id)?;
            Ok(())
        })?;
        self.record("group_delete", actor, json!({ "group_id": group_id }));
        Ok(())
    }

    /// Adds or removes a member. Removing a non-member succeeds and changes
    /// nothing.
    pub fn modify_group_member(
        &self,
        member_id: &str,
        group_id: &str,
        master_id: &str,
        actor: &Actor,
        add: bool,
    ) -> Result<(), RbacError> {
        if member_id.trim().is_empty() {
            return Err(RbacError::Validation(Field::MemberId));
        }
        Self::admin_of(actor, master_id)?;
        self.group_in(group_id, master_id)?;
        if self.store.read(|t| t.user(member_id).is_none()) {
            return Err(RbacError::Validation(Field::MemberId));
        }
        let changed = self.store.write(|t| {
            if add {
                t.insert_group_member(GroupMember {
                    group_id: group_id.to_string(),
                    user_id: member_id.to_string(),
                })?;
                Ok::<_, RbacError>(true)
            } else {
                Ok(t.remove_group_member(group_id, member_id))
            }
        })?;
        if changed {
            let op = if add {
                "group_member_add"
            } else {
                "group_member_remove"
            };
            self.record(
                op,
                actor,
                json!({ "group_id": group_id, "member_id": member_id }),
            );
        }
        Ok(())
    }

    pub fn add_group_permission(
        &self,
        group_id: &str,
        permission_id: &str,
        actor: &Actor,
        tags: &[String],
    ) -> Result<GroupPermission, RbacError> {
        let group = self
            .store
            .read(|t| t.group(group_id).cloned())
            .ok_or(RbacError::Validation(Field::GroupId))?;
        if actor.master_id != group.master_id {
            return Err(RbacError::Authorization);
        }
        let permission = self
            .store
            .read(|t| t.permission(permission_id).cloned())
            .filter(|p| p.enabled)
            .ok_or(RbacError::Validation(Field::PermissionId))?;
        if actor.role == Role::User && permission.role != PermissionRole::User {
            return Err(RbacError::Authorization);
        }
        let gp = GroupPermission {
            id: new_id(),
            group_id: group_id.to_string(),
            permission_id: permission_id.to_string(),
            master_id: group.master_id.clone(),
            tags: tags.to_vec(),
        };
        self.store
            .write(|t| t.insert_group_permission(gp.clone()))?;
        let gp = self
            .store
            .read(|t| {
                t.group_permissions_of(group_id)
                    .find(|x| x.id == gp.id)
                    .cloned()
            })
            .unwrap_or(gp);
        self.record(
            "group_permission_add",
            actor,
            json!({ "group_id": group_id, "permission_id": permission_id, "tags": gp.tags }),
        );
        Ok(gp)
    }

    /// Replaces the tags of an existing grant, under the same rules as
    /// granting it.
    pub fn update_group_permission_tags(
        &self,
        group_id: &str,
        permission_id: &str,
        actor: &Actor,
        tags: &[String],
    ) -> Result<(), RbacError> {
        let (group, permission) = self.store.read(|t| {
            (
                t.group(group_id).cloned(),
                t.permission(permission_id).cloned(),
            )
        });
        let group = group.ok_or(RbacError::Validation(Field::GroupId))?;
        let permission = permission.ok_or(RbacError::Validation(Field::PermissionId))?;
        if actor.master_id != group.master_id
            || (actor.role == Role::User && permission.role != PermissionRole::User)
        {
            return Err(RbacError::Authorization);
        }
        self.store
            .write(|t| t.set_group_permission_tags(group_id, permission_id, tags))?;
        self.record(
            "group_permission_tags",
            actor,
            json!({ "group_id": group_id, "permission_id": permission_id }),
        );
        Ok(())
    }

    pub fn view_group(&self, group_id: &str, actor: &Actor) -> Result<GroupView, RbacError> {
        self.store.read(|t| {
            let group = t
                .group(group_id)
                .cloned()
                .ok_or(RbacError::Validation(Field::GroupId))?;
            if group.master_id != actor.master_id {
                return Err(RbacError::Authorization);
            }
            Ok(GroupView {
                members: t.members_of(group_id).cloned().collect(),
                permissions: t.group_permissions_of(group_id).cloned().collect(),
                group,
            })
        })
    }

    pub fn list_groups(&self, actor: &Actor) -> Vec<Group> {
        self.store.read(|t| {
            t.groups()
                .filter(|g| g.master_id == actor.master_id)
                .cloned()
                .collect()
        })
    }

    /// Replaces the whole permission catalog from a JSON array. Nothing is
    /// loaded when any entry is malformed or repeats a (module, action).
    pub fn load_permission_catalog(&self, document: &str) -> Result<usize, RbacError> {
        let trimmed = document.trim_start();
        if !trimmed.starts_with('[') {
            return Err(RbacError::Parse("catalog must be a JSON array".into()));
        }
        let docs = parse_policy_documents(document).map_err(|e| match e {
            PolicyError::Parse(m) => RbacError::Parse(m),
            other => RbacError::Parse(other.to_string()),
        })?;
        let mut seen = BTreeSet::new();
        for d in &docs {
            if !seen.insert((d.module.trim(), d.action.trim())) {
                return Err(RbacError::DuplicateInCatalog {
                    module: d.module.clone(),
                    action: d.action.clone(),
                });
            }
        }
        let catalog = docs.into_iter().map(|d| d.into_permission()).collect();
        let count = self.store.write(|t| t.replace_permissions(catalog))?;
        self.audit.record(
            &AuditEvent::ok(self.clock.now(), "catalog_load").detail(json!({ "count": count })),
        );
        Ok(count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::model::UserRecord;

    struct Fx {
        store: Arc<Store>,
        rbac: RbacService,
    }

    fn fx() -> Fx {
        let store = Arc::new(Store::in_memory());
        let clock: SharedClock = Arc::new(ManualClock::fixed());
        let rbac = RbacService::new(store.clone(), clock, AuditLog::memory().0);
        Fx { store, rbac }
    }

    impl Fx {
        fn master(&self) -> Id {
            self.store.create_master(chrono::Utc::now()).unwrap().id
        }

        fn actor(&self, master: &Id, role: Role) -> Actor {
            let u = UserRecord {
                role,
                ..UserRecord::member(master)
            };
            self.store.write(|t| t.insert_user(u.clone())).unwrap();
            self.rbac.actor(&u.id).unwrap()
        }

        fn catalog(&self) {
            self.rbac
                .load_permission_catalog(
                    r#"[{"module":"client","action":"create","apps":["banking"],"role":"user","enabled":true},
                        {"module":"client","action":"delete","apps":["banking"],"role":"admin","enabled":true}]"#,
                )
                .unwrap();
        }

        fn perm(&self, action: &str) -> Id {
            self.store
                .read(|t| t.permission_by("client", action).map(|p| p.id.clone()))
                .unwrap()
        }
    }

    #[test]
    fn admin_creates_and_renames_group_in_own_master() {
        let f = fx();
        let m1 = f.master();
        let admin = f.actor(&m1, Role::Admin);
        let g = f.rbac.upsert_group("ops", &m1, &admin, None).unwrap();
        assert_eq!(g.master_id, m1);
        let g2 = f
            .rbac
            .upsert_group("sre", &m1, &admin, Some(&g.id))
            .unwrap();
        assert_eq!((g2.id, g2.name), (g.id, "sre".to_string()));
    }

    #[test]
    fn cross_master_admin_denied_and_empty_name_invalid() {
        let f = fx();
        let (m1, m2) = (f.master(), f.master());
        let other = f.actor(&m2, Role::Admin);
        assert_eq!(
            f.rbac.upsert_group("ops", &m1, &other, None),
            Err(RbacError::Authorization)
        );
        let admin = f.actor(&m1, Role::Admin);
        assert_eq!(
            f.rbac.upsert_group("  ", &m1, &admin, None),
            Err(RbacError::Validation(Field::Name))
        );
    }

    #[test]
    fn membership_crosses_masters_once() {
        let f = fx();
        let (m1, m2) = (f.master(), f.master());
        let admin = f.actor(&m1, Role::Admin);
        let outsider = f.actor(&m2, Role::User);
        let g = f.rbac.upsert_group("ops", &m1, &admin, None).unwrap();
        f.rbac
            .modify_group_member(&outsider.user_id, &g.id, &m1, &admin, true)
            .unwrap();
        assert!(matches!(
            f.rbac
                .modify_group_member(&outsider.user_id, &g.id, &m1, &admin, true),
            Err(RbacError::ConstraintViolation(_))
        ));
        let stranger = f.actor(&m2, Role::User);
        f.rbac
            .modify_group_member(&stranger.user_id, &g.id, &m1, &admin, false)
            .unwrap();
    }

    #[test]
    fn delete_checks_members_then_permissions() {
        let f = fx();
        let m1 = f.master();
        let admin = f.actor(&m1, Role::Admin);
        let member = f.actor(&m1, Role::User);
        f.catalog();
        let g = f.rbac.upsert_group("ops", &m1, &admin, None).unwrap();
        f.rbac
            .modify_group_member(&member.user_id, &g.id, &m1, &admin, true)
            .unwrap();
        f.rbac
            .add_group_permission(&g.id, &f.perm("create"), &admin, &[])
            .unwrap();
        assert_eq!(
            f.rbac.delete_group(&g.id, &m1, &admin),
            Err(RbacError::MembersPresent)
        );
        f.rbac
            .modify_group_member(&member.user_id, &g.id, &m1, &admin, false)
            .unwrap();
        assert_eq!(
            f.rbac.delete_group(&g.id, &m1, &admin),
            Err(RbacError::PermissionsPresent)
        );
    }

    #[test]
    fn user_actor_grants_only_user_permissions() {
        let f = fx();
        let m1 = f.master();
        let admin = f.actor(&m1, Role::Admin);
        let user = f.actor(&m1, Role::User);
        f.catalog();
        let g = f.rbac.upsert_group("ops", &m1, &admin, None).unwrap();
        assert_eq!(
            f.rbac
                .add_group_permission(&g.id, &f.perm("delete"), &user, &[]),
            Err(RbacError::Authorization)
        );
        f.rbac
            .add_group_permission(&g.id, &f.perm("create"), &user, &[])
            .unwrap();
        f.rbac
            .add_group_permission(&g.id, &f.perm("delete"), &admin, &[])
            .unwrap();
        assert!(matches!(
            f.rbac
                .add_group_permission(&g.id, &f.perm("delete"), &admin, &[]),
            Err(RbacError::ConstraintViolation(_))
        ));
    }

    #[test]
    fn grant_tags_are_normalized_and_updatable() {
        let f = fx();
        let m1 = f.master();
        let admin = f.actor(&m1, Role::Admin);
        f.catalog();
        let g = f.rbac.upsert_group("ops", &m1, &admin, None).unwrap();
        let gp = f
            .rbac
            .add_group_permission(&g.id, &f.perm("create"), &admin, &["Marketing1".into()])
            .unwrap();
        assert_eq!(gp.tags, vec!["marketing1"]);
        f.rbac
            .update_group_permission_tags(&g.id, &f.perm("create"), &admin, &["Ops".into()])
            .unwrap();
        let view = f.rbac.view_group(&g.id, &admin).unwrap();
        assert_eq!(view.permissions[0].tags, vec!["ops"]);
    }

    #[test]
    fn catalog_is_all_or_nothing() {
        let f = fx();
        f.catalog();
        let dup = r#"[{"module":"accounting_client","action":"list","apps":[],"role":"user","enabled":true},
                      {"module":"accounting_client","action":"list","apps":[],"role":"user","enabled":true}]"#;
        assert!(matches!(
            f.rbac.load_permission_catalog(dup),
            Err(RbacError::DuplicateInCatalog { .. })
        ));
        assert_eq!(f.store.read(|t| t.permissions().count()), 2);
        assert!(matches!(
            f.rbac.load_permission_catalog("{}"),
            Err(RbacError::Parse(_))
        ));
        assert_eq!(f.rbac.load_permission_catalog("[]"), Ok(0));
        assert_eq!(f.store.read(|t| t.permissions().count()), 0);
    }
}
