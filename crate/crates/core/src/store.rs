//! Transactional table store.
//!
//! Every write runs against a private copy of the tables and is published
//! only if the closure succeeds (and, for file-backed stores, the snapshot
//! reached disk). Readers never observe a partially applied write, and all
//! unique-key and foreign-key checks happen inside the same critical section
//! as the insert they guard.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::model::{
    new_id, Address, Group, GroupMember, GroupPermission, Id, MasterRecord, MfaRecord, Permission,
    Resource, UserDetails, UserRecord,
};
use crate::vault::Credential;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("unique constraint {0} violated")]
    ConstraintViolation(&'static str),
    #[error("foreign key {0} does not resolve")]
    ForeignKeyViolation(&'static str),
    #[error("{0} not found")]
    NotFound(&'static str),
    #[error("{0} is disabled")]
    OperationDisabled(&'static str),
    #[error("storage backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Master,
    User,
    UserDetails,
    Address,
    Group,
    GroupMembers,
    Permission,
    GroupPermission,
    Resource,
    Mfa,
    Credential,
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = serde_json::to_value(self).ok();
        let name = name.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        f.write_str(name)
    }
}

/// One row for [`Tables::insert_unique`].
#[derive(Debug, Clone)]
pub enum Row {
    Master(MasterRecord),
    User(UserRecord),
    UserDetails(UserDetails),
    Address(Address),
    Group(Group),
    GroupMember(GroupMember),
    Permission(Permission),
    GroupPermission(GroupPermission),
    Resource(Resource),
}

type Faults = Arc<Mutex<BTreeSet<Table>>>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Tables {
    masters: BTreeMap<Id, MasterRecord>,
    users: BTreeMap<Id, UserRecord>,
    user_details: BTreeMap<Id, UserDetails>,
    details_by_user: BTreeMap<Id, Id>,
    details_by_email: BTreeMap<String, Id>,
    details_by_phone: BTreeMap<String, Id>,
    addresses: BTreeMap<Id, Address>,
    groups: BTreeMap<Id, Group>,
    group_members: BTreeSet<GroupMember>,
    permissions: BTreeMap<Id, Permission>,
    group_permissions: BTreeMap<Id, GroupPermission>,
    resources: BTreeMap<Id, Resource>,
    resources_by_master: BTreeMap<Id, BTreeSet<Id>>,
    mfa: BTreeMap<Id, MfaRecord>,
    credentials: BTreeMap<Id, Credential>,
    revoked_tokens: BTreeMap<Uuid, DateTime<Utc>>,
    policy_version: u64,
    #[serde(skip)]
    faults: Faults,
}

impl Tables {
    fn trip(&self, table: Table) -> Result<(), StoreError> {
        if self.faults.lock().remove(&table) {
            return Err(StoreError::Backend(format!("injected fault on {table}")));
        }
        Ok(())
    }

    pub fn count(&self, table: Table) -> usize {
        match table {
            Table::Master => self.masters.len(),
            Table::User => self.users.len(),
            Table::UserDetails => self.user_details.len(),
            Table::Address => self.addresses.len(),
            Table::Group => self.groups.len(),
            Table::GroupMembers => self.group_members.len(),
            Table::Permission => self.permissions.len(),
            Table::GroupPermission => self.group_permissions.len(),
            Table::Resource => self.resources.len(),
            Table::Mfa => self.mfa.len(),
            Table::Credential => self.credentials.len(),
        }
    }

    pub fn insert_unique(&mut self, row: Row) -> Result<Id, StoreError> {
        match row {
            Row::Master(r) => {
                let id = r.id.clone();
                self.insert_master(r).map(|_| id)
            }
            Row::User(r) => {
                let id = r.id.clone();
                self.insert_user(r).map(|_| id)
            }
            Row::UserDetails(r) => {
                let id = r.id.clone();
                self.insert_user_details(r).map(|_| id)
            }
            Row::Address(r) => {
                let id = r.id.clone();
                if self.addresses.contains_key(&id) {
                    return Err(StoreError::ConstraintViolation("address.id"));
                }
                self.upsert_address(r).map(|_| id)
            }
            Row::Group(r) => {
                let id = r.id.clone();
                self.insert_group(r).map(|_| id)
            }
            Row::GroupMember(r) => {
                let id = format!("{}:{}", r.group_id, r.user_id);
                self.insert_group_member(r).map(|_| id)
            }
            Row::Permission(r) => {
                let id = r.id.clone();
                self.insert_permission(r).map(|_| id)
            }
            Row::GroupPermission(r) => {
                let id = r.id.clone();
                self.insert_group_permission(r).map(|_| id)
            }
            Row::Resource(r) => {
                let id = r.id.clone();
                self.insert_resource(r).map(|_| id)
            }
        }
    }

    // master

    pub fn insert_master(&mut self, master: MasterRecord) -> Result<(), StoreError> {
        self.trip(Table::Master)?;
        if self.masters.contains_key(&master.id) {
            return Err(StoreError::ConstraintViolation("master.id"));
        }
        self.masters.insert(master.id.clone(), master);
        Ok(())
    }

    pub fn master(&self, id: &str) -> Option<&MasterRecord> {
        self.masters.get(id)
    }

    pub fn masters(&self) -> impl Iterator<Item = &MasterRecord> {
        self.masters.values()
    }

    // user

    pub fn insert_user(&mut self, user: UserRecord) -> Result<(), StoreError> {
        self.trip(Table::User)?;
        if self.users.contains_key(&user.id) {
            return Err(StoreError::ConstraintViolation("user.id"));
        }
        if !self.masters.contains_key(&user.master_id) {
            return Err(StoreError::ForeignKeyViolation("user.master_id"));
        }
        if user.is_root && self.root_of(&user.master_id).is_some() {
            return Err(StoreError::ConstraintViolation("user.root_per_master"));
        }
        self.users.insert(user.id.clone(), user);
        Ok(())
    }

    pub fn update_user(&mut self, user: UserRecord) -> Result<(), StoreError> {
        let existing = self
            .users
            .get(&user.id)
            .ok_or(StoreError::NotFound("user"))?;
        if existing.master_id != user.master_id {
            return Err(StoreError::ConstraintViolation("user.master_id"));
        }
        if user.is_root && !existing.is_root && self.root_of(&user.master_id).is_some() {
            return Err(StoreError::ConstraintViolation("user.root_per_master"));
        }
        self.users.insert(user.id.clone(), user);
        self.policy_version += 1;
        Ok(())
    }

    pub fn user(&self, id: &str) -> Option<&UserRecord> {
        self.users.get(id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserRecord> {
        self.users.values()
    }

    pub fn root_of(&self, master_id: &str) -> Option<&UserRecord> {
        self.users
            .values()
            .find(|u| u.is_root && u.master_id == master_id)
    }

    // user_details

    pub fn insert_user_details(&mut self, details: UserDetails) -> Result<(), StoreError> {
        self.trip(Table::UserDetails)?;
        if self.user_details.contains_key(&details.id) {
            return Err(StoreError::ConstraintViolation("user_details.id"));
        }
        if !self.users.contains_key(&details.user_id) {
            return Err(StoreError::ForeignKeyViolation("user_details.user_id"));
        }
        if self.details_by_user.contains_key(&details.user_id) {
            return Err(StoreError::ConstraintViolation("user_details.user_id"));
        }
        self.check_contact_unique(&details, None)?;
        self.index_details(&details);
        self.user_details.insert(details.id.clone(), details);
        Ok(())
    }

    fn check_contact_unique(
        &self,
        details: &UserDetails,
        own_id: Option<&str>,
    ) -> Result<(), StoreError> {
        let taken = |idx: &BTreeMap<String, Id>, key: &str| {
            idx.get(key).is_some_and(|id| Some(id.as_str()) != own_id)
        };
        if taken(&self.details_by_email, &details.email) {
            return Err(StoreError::ConstraintViolation("user_details.email"));
        }
        if !details.phone.is_empty() && taken(&self.details_by_phone, &details.phone) {
            return Err(StoreError::ConstraintViolation("user_details.phone"));
        }
        Ok(())
    }

    fn index_details(&mut self, d: &UserDetails) {
        self.details_by_user.insert(d.user_id.clone(), d.id.clone());
        self.details_by_email.insert(d.email.clone(), d.id.clone());
        if !d.phone.is_empty() {
            self.details_by_phone.insert(d.phone.clone(), d.id.clone());
        }
    }

    pub fn update_user_details(&mut self, details: UserDetails) -> Result<(), StoreError> {
        let old = self
            .user_details
            .get(&details.id)
            .ok_or(StoreError::NotFound("user_details"))?
            .clone();
        if old.user_id != details.user_id {
            return Err(StoreError::ConstraintViolation("user_details.user_id"));
        }
        self.check_contact_unique(&details, Some(&details.id))?;
        self.details_by_email.remove(&old.email);
        if !old.phone.is_empty() {
            self.details_by_phone.remove(&old.phone);
        }
        self.index_details(&details);
        self.user_details.insert(details.id.clone(), details);
        Ok(())
    }

    pub fn details_for_user(&self, user_id: &str) -> Option<&UserDetails> {
        self.details_by_user
            .get(user_id)
            .and_then(|id| self.user_details.get(id))
    }

    pub fn details_by_email(&self, email: &str) -> Option<&UserDetails> {
        self.details_by_email
            .get(email)
            .and_then(|id| self.user_details.get(id))
    }

    pub fn details_by_phone(&self, phone: &str) -> Option<&UserDetails> {
        if phone.is_empty() {
            return None;
        }
        self.details_by_phone
            .get(phone)
            .and_then(|id| self.user_details.get(id))
    }

    pub fn all_user_details(&self) -> impl Iterator<Item = &UserDetails> {
        self.user_details.values()
    }

    // address

    /// Inserts a new address or edits one the same user already owns.
    pub fn upsert_address(&mut self, address: Address) -> Result<(), StoreError> {
        self.trip(Table::Address)?;
        if !self.users.contains_key(&address.user_id) {
            return Err(StoreError::ForeignKeyViolation("address.user_id"));
        }
        if let Some(existing) = self.addresses.get(&address.id) {
            if existing.user_id != address.user_id {
                return Err(StoreError::ConstraintViolation("address.user_id"));
            }
        }
        self.addresses.insert(address.id.clone(), address);
        Ok(())
    }

    pub fn delete_address(&mut self, _id: &str) -> Result<(), StoreError> {
        Err(StoreError::OperationDisabled("address deletion"))
    }

    pub fn addresses_for<'a>(&'a self, user_id: &'a str) -> impl Iterator<Item = &'a Address> {
        self.addresses
            .values()
            .filter(move |a| a.user_id == user_id)
    }

    // group

    pub fn insert_group(&mut self, group: Group) -> Result<(), StoreError> {
        self.trip(Table::Group)?;
        if self.groups.contains_key(&group.id) {
            return Err(StoreError::ConstraintViolation("group.id"));
        }
        if !self.masters.contains_key(&group.master_id) {
            return Err(StoreError::ForeignKeyViolation("group.master_id"));
        }
        self.groups.insert(group.id.clone(), group);
        Ok(())
    }

    pub fn rename_group(&mut self, id: &str, name: &str) -> Result<(), StoreError> {
        let group = self
            .groups
            .get_mut(id)
            .ok_or(StoreError::NotFound("group"))?;
        group.name = name.to_string();
        Ok(())
    }

    /// Removes a group that nothing references any more.
    pub fn delete_group(&mut self, id: &str) -> Result<Group, StoreError> {
        if self.members_of(id).next().is_some() {
            return Err(StoreError::ForeignKeyViolation("group_members.group_id"));
        }
        if self.group_permissions_of(id).next().is_some() {
            return Err(StoreError::ForeignKeyViolation("group_permission.group_id"));
        }
        self.groups.remove(id).ok_or(StoreError::NotFound("group"))
    }

    pub fn group(&self, id: &str) -> Option<&Group> {
        self.groups.get(id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.values()
    }

    // group_members

    pub fn insert_group_member(&mut self, member: GroupMember) -> Result<(), StoreError> {
        self.trip(Table::GroupMembers)?;
        if !self.groups.contains_key(&member.group_id) {
            return Err(StoreError::ForeignKeyViolation("group_members.group_id"));
        }
        if !self.users.contains_key(&member.user_id) {
            return Err(StoreError::ForeignKeyViolation("group_members.user_id"));
        }
        if !self.group_members.insert(member) {
            return Err(StoreError::ConstraintViolation(
                "group_members.group_id_user_id",
            ));
        }
        self.policy_version += 1;
        Ok(())
    }

    pub fn remove_group_member(&mut self, group_id: &str, user_id: &str) -> bool {
        let removed = self.group_members.remove(&GroupMember {
            group_id: group_id.to_string(),
            user_id: user_id.to_string(),
        });
        if removed {
            self.policy_version += 1;
        }
        removed
    }

    pub fn members_of<'a>(&'a self, group_id: &'a str) -> impl Iterator<Item = &'a Id> {
        self.group_members
            .iter()
            .filter(move |m| m.group_id == group_id)
            .map(|m| &m.user_id)
    }

    pub fn groups_of<'a>(&'a self, user_id: &'a str) -> impl Iterator<Item = &'a Group> {
        self.group_members
            .iter()
            .filter(move |m| m.user_id == user_id)
            .filter_map(|m| self.groups.get(&m.group_id))
    }

    // permission

    pub fn insert_permission(&mut self, permission: Permission) -> Result<(), StoreError> {
        self.trip(Table::Permission)?;
        if self.permissions.contains_key(&permission.id) {
            return Err(StoreError::ConstraintViolation("permission.id"));
        }
        if self
            .permission_by(&permission.module, &permission.action)
            .is_some()
        {
            return Err(StoreError::ConstraintViolation("permission.module_action"));
        }
        self.permissions.insert(permission.id.clone(), permission);
        self.policy_version += 1;
        Ok(())
    }

    /// Inserts or replaces the permission keyed by (module, action), keeping
    /// the existing id so group grants stay attached. Returns the id.
    pub fn upsert_permission(&mut self, mut permission: Permission) -> Result<Id, StoreError> {
        self.trip(Table::Permission)?;
        if let Some(existing) = self.permission_by(&permission.module, &permission.action) {
            permission.id = existing.id.clone();
        } else if permission.id.is_empty() || self.permissions.contains_key(&permission.id) {
            permission.id = new_id();
        }
        let id = permission.id.clone();
        self.permissions.insert(id.clone(), permission);
        self.policy_version += 1;
        Ok(id)
    }

    /// Swaps the whole catalog. Entries whose (module, action) already
    /// existed keep their id; grants of dropped permissions are removed.
    pub fn replace_permissions(&mut self, catalog: Vec<Permission>) -> Result<usize, StoreError> {
        self.trip(Table::Permission)?;
        let mut next: BTreeMap<Id, Permission> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for mut p in catalog {
            if !seen.insert((p.module.clone(), p.action.clone())) {
                return Err(StoreError::ConstraintViolation("permission.module_action"));
            }
            p.id = match self.permission_by(&p.module, &p.action) {
                Some(existing) => existing.id.clone(),
                None => new_id(),
            };
            next.insert(p.id.clone(), p);
        }
        let count = next.len();
        self.group_permissions
            .retain(|_, gp| next.contains_key(&gp.permission_id));
        self.permissions = next;
        self.policy_version += 1;
        Ok(count)
    }

    pub fn permission(&self, id: &str) -> Option<&Permission> {
        self.permissions.get(id)
    }

    pub fn permission_by(&self, module: &str, action: &str) -> Option<&Permission> {
        self.permissions
            .values()
            .find(|p| p.module == module && p.action == action)
    }

    pub fn permissions(&self) -> impl Iterator<Item = &Permission> {
        self.permissions.values()
    }

    // group_permission

    pub fn insert_group_permission(&mut self, gp: GroupPermission) -> Result<(), StoreError> {
        self.trip(Table::GroupPermission)?;
        if self.group_permissions.contains_key(&gp.id) {
            return Err(StoreError::ConstraintViolation("group_permission.id"));
        }
        if !self.groups.contains_key(&gp.group_id) {
            return Err(StoreError::ForeignKeyViolation("group_permission.group_id"));
        }
        if !self.permissions.contains_key(&gp.permission_id) {
            return Err(StoreError::ForeignKeyViolation(
                "group_permission.permission_id",
            ));
        }
        if !self.masters.contains_key(&gp.master_id) {
            return Err(StoreError::ForeignKeyViolation(
                "group_permission.master_id",
            ));
        }
        if self
            .group_permissions
            .values()
            .any(|x| x.group_id == gp.group_id && x.permission_id == gp.permission_id)
        {
            return Err(StoreError::ConstraintViolation(
                "group_permission.group_id_permission_id",
            ));
        }
        let gp = GroupPermission {
            tags: crate::model::normalize_tags(&gp.tags),
            ..gp
        };
        self.group_permissions.insert(gp.id.clone(), gp);
        self.policy_version += 1;
        Ok(())
    }

    pub fn set_group_permission_tags(
        &mut self,
        group_id: &str,
        permission_id: &str,
        tags: &[String],
    ) -> Result<(), StoreError> {
        let gp = self
            .group_permissions
            .values_mut()
            .find(|gp| gp.group_id == group_id && gp.permission_id == permission_id)
            .ok_or(StoreError::NotFound("group_permission"))?;
        gp.tags = crate::model::normalize_tags(tags);
        self.policy_version += 1;
        Ok(())
    }

    pub fn group_permissions_of<'a>(
        &'a self,
        group_id: &'a str,
    ) -> impl Iterator<Item = &'a GroupPermission> {
        self.group_permissions
            .values()
            .filter(move |gp| gp.group_id == group_id)
    }

    pub fn group_permissions(&self) -> impl Iterator<Item = &GroupPermission> {
        self.group_permissions.values()
    }

    // resource

    pub fn insert_resource(&mut self, resource: Resource) -> Result<(), StoreError> {
        self.trip(Table::Resource)?;
        if self.resources.contains_key(&resource.id) {
            return Err(StoreError::ConstraintViolation("resource.id"));
        }
        if !self.masters.contains_key(&resource.master_id) {
            return Err(StoreError::ForeignKeyViolation("resource.master_id"));
        }
        let resource = Resource {
            tags: crate::model::normalize_tags(&resource.tags),
            ..resource
        };
        self.resources_by_master
            .entry(resource.master_id.clone())
            .or_default()
            .insert(resource.id.clone());
        self.resources.insert(resource.id.clone(), resource);
        Ok(())
    }

    pub fn resource(&self, id: &str) -> Option<&Resource> {
        self.resources.get(id)
    }

    pub fn resources_of_master<'a>(
        &'a self,
        master_id: &str,
    ) -> impl Iterator<Item = &'a Resource> + 'a {
        self.resources_by_master
            .get(master_id)
            .into_iter()
            .flatten()
            .filter_map(|id| self.resources.get(id))
    }

    // mfa

    pub fn mfa(&self, user_id: &str) -> Option<&MfaRecord> {
        self.mfa.get(user_id)
    }

    /// One row per user; writing again replaces that user's row.
    pub fn put_mfa(&mut self, record: MfaRecord) -> Result<(), StoreError> {
        self.trip(Table::Mfa)?;
        if !self.users.contains_key(&record.user_id) {
            return Err(StoreError::ForeignKeyViolation("mfa.user_id"));
        }
        self.mfa.insert(record.user_id.clone(), record);
        Ok(())
    }

    // vault credentials

    pub fn put_credential(&mut self, credential: Credential) -> Result<(), StoreError> {
        self.trip(Table::Credential)?;
        self.credentials.insert(credential.id.clone(), credential);
        Ok(())
    }

    pub fn credential(&self, id: &str) -> Option<&Credential> {
        self.credentials.get(id)
    }

    pub fn credentials(&self) -> impl Iterator<Item = &Credential> {
        self.credentials.values()
    }

    // token revocation

    /// Records `jti` as revoked. Returns false if it already was.
    pub fn revoke_token(&mut self, jti: Uuid, at: DateTime<Utc>) -> bool {
        use std::collections::btree_map::Entry;
        match self.revoked_tokens.entry(jti) {
            Entry::Occupied(_) => false,
            Entry::Vacant(v) => {
                v.insert(at);
                true
            }
        }
    }

    pub fn is_revoked(&self, jti: &Uuid) -> bool {
        self.revoked_tokens.contains_key(jti)
    }

    // policy store version, bumped by every write that can change a decision

    pub fn policy_version(&self) -> u64 {
        self.policy_version
    }
}

/// Shared handle to the table store.
pub struct Store {
    tables: RwLock<Tables>,
    path: Option<PathBuf>,
    faults: Faults,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store").field("path", &self.path).finish()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        let faults = Faults::default();
        Self {
            tables: RwLock::new(Tables {
                faults: faults.clone(),
                ..Tables::default()
            }),
            path: None,
            faults,
        }
    }

    /// Opens (or creates) a store persisted as a JSON snapshot at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let faults = Faults::default();
        let mut tables = if path.exists() {
            let bytes = std::fs::read(&path).map_err(|e| StoreError::Backend(e.to_string()))?;
            serde_json::from_slice::<Tables>(&bytes)
                .map_err(|e| StoreError::Backend(format!("{}: {e}", path.display())))?
        } else {
            Tables::default()
        };
        tables.faults = faults.clone();
        Ok(Self {
            tables: RwLock::new(tables),
            path: Some(path),
            faults,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn read<R>(&self, f: impl FnOnce(&Tables) -> R) -> R {
        f(&self.tables.read())
    }

    /// Runs `f` as one atomic transaction.
    pub fn write<R, E>(&self, f: impl FnOnce(&mut Tables) -> Result<R, E>) -> Result<R, E>
    where
        E: From<StoreError>,
    {
        let mut guard = self.tables.write();
        let mut draft = guard.clone();
        let out = f(&mut draft)?;
        if let Some(path) = &self.path {
            persist(path, &draft)?;
        }
        *guard = draft;
        Ok(out)
    }

    /// Makes the next insert into `table` fail with a backend error.
    pub fn inject_fault(&self, table: Table) {
        self.faults.lock().insert(table);
    }

    pub fn count(&self, table: Table) -> usize {
        self.read(|t| t.count(table))
    }

    pub fn create_master(&self, at: DateTime<Utc>) -> Result<MasterRecord, StoreError> {
        let master = MasterRecord {
            id: new_id(),
            created_at: at,
        };
        self.write(|t| t.insert_master(master.clone()))?;
        Ok(master)
    }

    pub fn insert_unique(&self, row: Row) -> Result<Id, StoreError> {
        self.write(|t| t.insert_unique(row))
    }

    /// The exact bytes a file-backed store would hold for the current state.
    pub fn persisted_bytes(&self) -> Vec<u8> {
        match &self.path {
            Some(path) if path.exists() => std::fs::read(path).unwrap_or_default(),
            _ => self.read(|t| serde_json::to_vec(t).unwrap_or_default()),
        }
    }
}

fn persist(path: &Path, tables: &Tables) -> Result<(), StoreError> {
    let bytes = serde_json::to_vec(tables).map_err(|e| StoreError::Backend(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| StoreError::Backend(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| StoreError::Backend(e.to_string()))
}

/// Table definitions and constraints, for documentation.
pub fn schema() -> serde_json::Value {
    serde_json::json!({
        "tables": [
            {
                "name": "master",
                "columns": ["id", "created_at"],
                "primary_key": ["id"],
                "unique": [["id"]],
                "indexes": [["id"]],
                "foreign_keys": []
            },
            {
                "name": "user",
                "columns": ["id", "master_id", "role", "status", "is_root"],
                "primary_key": ["id"],
                "unique": [["id"]],
                "indexes": [["id"]],
                "foreign_keys": [{"column": "master_id", "references": "master.id"}],
                "checks": ["at most one is_root user per master_id"]
            },
            {
                "name": "user_details",
                "columns": ["id", "user_id", "name", "email", "phone", "password_hash", "dob",
                            "email_verified", "phone_verified", "profile_image", "otp"],
                "primary_key": ["id"],
                "unique": [["id"], ["user_id"], ["email"], ["phone"]],
                "indexes": [["id"], ["user_id"], ["email"], ["phone"]],
                "foreign_keys": [{"column": "user_id", "references": "user.id"}]
            },
            {
                "name": "address",
                "columns": ["id", "user_id", "lines", "city", "country"],
                "primary_key": ["id"],
                "unique": [["id"]],
                "indexes": [["id"], ["user_id"]],
                "foreign_keys": [{"column": "user_id", "references": "user.id"}],
                "checks": ["rows are never deleted"]
            },
            {
                "name": "group",
                "columns": ["id", "name", "master_id"],
                "primary_key": ["id"],
                "unique": [["id"]],
                "indexes": [["id"]],
                "foreign_keys": [{"column": "master_id", "references": "master.id"}]
            },
            {
                "name": "group_members",
                "columns": ["group_id", "user_id"],
                "primary_key": ["group_id", "user_id"],
                "unique": [["group_id", "user_id"]],
                "indexes": [["group_id", "user_id"]],
                "foreign_keys": [
                    {"column": "group_id", "references": "group.id"},
                    {"column": "user_id", "references": "user.id"}
                ]
            },
            {
                "name": "permission",
                "columns": ["id", "module", "action", "apps", "role", "enabled", "allow_untagged"],
                "primary_key": ["id"],
                "unique": [["id"], ["module", "action"]],
                "indexes": [["id"], ["module"]],
                "foreign_keys": []
            },
            {
                "name": "group_permission",
                "columns": ["id", "group_id", "permission_id", "master_id", "tags"],
                "primary_key": ["id"],
                "unique": [["id"], ["group_id", "permission_id"]],
                "indexes": [["id"], ["group_id"]],
                "foreign_keys": [
                    {"column": "group_id", "references": "group.id"},
                    {"column": "permission_id", "references": "permission.id"},
                    {"column": "master_id", "references": "master.id"}
                ]
            },
            {
                "name": "resource",
                "columns": ["id", "master_id", "kind", "tags", "payload"],
                "primary_key": ["id"],
                "unique": [["id"]],
                "indexes": [["id"], ["master_id"]],
                "foreign_keys": [{"column": "master_id", "references": "master.id"}]
            },
            {
                "name": "mfa",
                "columns": ["user_id", "mfa_type", "enabled", "otp", "totp_secret", "backup_codes"],
                "primary_key": ["user_id"],
                "unique": [["user_id"]],
                "indexes": [["user_id"]],
                "foreign_keys": [{"column": "user_id", "references": "user.id"}]
            }
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PermissionRole, Role, UserStatus};
    use chrono::Utc;

    fn permission(module: &str, action: &str) -> Permission {
        Permission {
            id: new_id(),
            module: module.into(),
            action: action.into(),
            apps: vec!["banking".into()],
            role: PermissionRole::User,
            enabled: true,
            allow_untagged: true,
        }
    }

    fn seeded() -> (Store, MasterRecord, UserRecord) {
        let store = Store::in_memory();
        let m = store.create_master(Utc::now()).unwrap();
        let u = UserRecord::member(&m.id);
        store.insert_unique(Row::User(u.clone())).unwrap();
        (store, m, u)
    }

    #[test]
    fn masters_get_distinct_ids() {
        let store = Store::in_memory();
        let a = store.create_master(Utc::now()).unwrap();
        let b = store.create_master(Utc::now()).unwrap();
        assert_ne!(a.id, b.id);
        let u = UserRecord::member(&a.id);
        store.insert_unique(Row::User(u.clone())).unwrap();
        assert_eq!(
            store.read(|t| t.user(&u.id).unwrap().master_id.clone()),
            a.id
        );
    }

    #[test]
    fn concurrent_master_creation_yields_distinct_ids() {
        let store = Arc::new(Store::in_memory());
        let handles: Vec<_> = (0..100)
            .map(|_| {
                let s = store.clone();
                std::thread::spawn(move || s.create_master(Utc::now()).unwrap().id)
            })
            .collect();
        let ids: BTreeSet<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(ids.len(), 100);
        assert_eq!(store.count(Table::Master), 100);
    }

    #[test]
    fn duplicate_module_action_rejected() {
        let store = Store::in_memory();
        store
            .insert_unique(Row::Permission(permission("client", "create")))
            .unwrap();
        let err = store
            .insert_unique(Row::Permission(permission("client", "create")))
            .unwrap_err();
        assert_eq!(
            err,
            StoreError::ConstraintViolation("permission.module_action")
        );
    }

    #[test]
    fn duplicate_membership_rejected_and_dangling_group_is_fk_error() {
        let (store, m, u) = seeded();
        let g = Group {
            id: new_id(),
            name: "ops".into(),
            master_id: m.id.clone(),
        };
        store.insert_unique(Row::Group(g.clone())).unwrap();
        let member = GroupMember {
            group_id: g.id.clone(),
            user_id: u.id.clone(),
        };
        store
            .insert_unique(Row::GroupMember(member.clone()))
            .unwrap();
        assert_eq!(
            store.insert_unique(Row::GroupMember(member)).unwrap_err(),
            StoreError::ConstraintViolation("group_members.group_id_user_id")
        );
        let dangling = GroupMember {
            group_id: "nope".into(),
            user_id: u.id,
        };
        assert_eq!(
            store.insert_unique(Row::GroupMember(dangling)).unwrap_err(),
            StoreError::ForeignKeyViolation("group_members.group_id")
        );
    }

    #[test]
    fn one_root_per_master() {
        let (store, m, _) = seeded();
        let root = UserRecord {
            is_root: true,
            role: Role::Admin,
            ..UserRecord::member(&m.id)
        };
        store.insert_unique(Row::User(root)).unwrap();
        let second = UserRecord {
            is_root: true,
            ..UserRecord::member(&m.id)
        };
        assert_eq!(
            store.insert_unique(Row::User(second)).unwrap_err(),
            StoreError::ConstraintViolation("user.root_per_master")
        );
    }

    #[test]
    fn racing_duplicate_inserts_admit_exactly_one() {
        let store = Arc::new(Store::in_memory());
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let s = store.clone();
                std::thread::spawn(move || {
                    s.insert_unique(Row::Permission(permission("client", "create")))
                        .is_ok()
                })
            })
            .collect();
        let wins = handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .filter(|ok| *ok)
            .count();
        assert_eq!(wins, 1);
    }

    #[test]
    fn failed_transaction_leaves_no_trace() {
        let (store, m, _) = seeded();
        let before = store.count(Table::Group);
        let res: Result<(), StoreError> = store.write(|t| {
            t.insert_group(Group {
                id: new_id(),
                name: "a".into(),
                master_id: m.id.clone(),
            })?;
            t.insert_group(Group {
                id: new_id(),
                name: "b".into(),
                master_id: "missing".into(),
            })
        });
        assert!(res.is_err());
        assert_eq!(store.count(Table::Group), before);
    }

    #[test]
    fn addresses_are_update_only() {
        let (store, _, u) = seeded();
        let a = Address {
            id: new_id(),
            user_id: u.id.clone(),
            lines: vec!["1 Main St".into()],
            city: "Pune".into(),
            country: "IN".into(),
        };
        store.insert_unique(Row::Address(a.clone())).unwrap();
        let err = store.write(|t| t.delete_address(&a.id)).unwrap_err();
        assert!(matches!(err, StoreError::OperationDisabled(_)));
        assert_eq!(store.count(Table::Address), 1);
    }

    #[test]
    fn injected_fault_fires_once() {
        let store = Store::in_memory();
        store.inject_fault(Table::Master);
        assert!(matches!(
            store.create_master(Utc::now()),
            Err(StoreError::Backend(_))
        ));
        assert!(store.create_master(Utc::now()).is_ok());
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        let store = Store::open(&path).unwrap();
        let m = store.create_master(Utc::now()).unwrap();
        let u = UserRecord {
            status: UserStatus::Inactive,
            ..UserRecord::member(&m.id)
        };
        store.insert_unique(Row::User(u.clone())).unwrap();
        drop(store);
        let reopened = Store::open(&path).unwrap();
        assert_eq!(reopened.read(|t| t.user(&u.id).cloned()), Some(u));
        assert_eq!(reopened.read(|t| t.master(&m.id).cloned()), Some(m));
    }

    #[test]
    fn catalog_swap_keeps_ids_and_drops_orphan_grants() {
        let (store, m, _) = seeded();
        let g = Group {
            id: new_id(),
            name: "g".into(),
            master_id: m.id.clone(),
        };
        store.insert_unique(Row::Group(g.clone())).unwrap();
        store
            .write(|t| {
                t.replace_permissions(vec![permission("a", "list"), permission("b", "list")])
            })
            .unwrap();
        let a_id = store.read(|t| t.permission_by("a", "list").unwrap().id.clone());
        let b_id = store.read(|t| t.permission_by("b", "list").unwrap().id.clone());
        for pid in [&a_id, &b_id] {
            store
                .insert_unique(Row::GroupPermission(GroupPermission {
                    id: new_id(),
                    group_id: g.id.clone(),
                    permission_id: pid.clone(),
                    master_id: m.id.clone(),
                    tags: vec![],
                }))
                .unwrap();
        }
        store
            .write(|t| t.replace_permissions(vec![permission("a", "list")]))
            .unwrap();
        assert_eq!(
            store.read(|t| t.permission_by("a", "list").unwrap().id.clone()),
            a_id
        );
        assert_eq!(store.count(Table::GroupPermission), 1);
    }

    #[test]
    fn schema_lists_every_constraint() {
        let s = schema();
        let tables = s["tables"].as_array().unwrap();
        assert_eq!(tables.len(), 10);
        let perm = tables.iter().find(|t| t["name"] == "permission").unwrap();
        assert!(perm["unique"]
            .as_array()
            .unwrap()
            .contains(&serde_json::json!(["module", "action"])));
    }
}
