mod common;

use std::sync::Arc;

use chez_core::audit::AuditLog;
use chez_core::clock::{Clock, SystemClock};
use chez_core::config::Config;
use chez_core::policy::{PolicyEngine, ReasonCode};
use chez_core::store::Store;
use chez_core::vault::{
    Audience, Charset, CredentialKind, Environment, NewCredential, RotationPolicy, RotationTrigger,
    SimulatedTarget, Vault, VaultError, VaultKey,
};
use chrono::Duration;
use common::{world, World};
use serde_json::{json, Value};

fn spec(env: Environment, audience: Audience) -> NewCredential {
    NewCredential {
        kind: CredentialKind::SshKey,
        audience,
        environment: env,
        rotation_policy: RotationPolicy::default(),
    }
}

/// An operator whose vault grants are scoped to `envs`.
fn operator(w: &World, email: &str, envs: &[&str]) -> String {
    let u = w.user(email);
    let grants: Vec<(&str, &str, &[&str])> = ["create", "read", "rotate", "list", "session"]
        .into_iter()
        .map(|a| ("vault", a, envs))
        .collect();
    w.group(&format!("vault-{email}"), &[&u], &grants);
    u
}

fn vault_ops(w: &World) -> Vec<Value> {
    w.t.audit
        .records()
        .into_iter()
        .filter(|r| {
            matches!(
                r["op"].as_str(),
                Some("store" | "retrieve" | "rotate" | "psm_start" | "psm_end")
            )
        })
        .collect()
}

#[test]
fn store_then_retrieve_with_fresh_mfa() {
    let w = world();
    let op = operator(&w, "op@example.com", &["prod"]);
    let id =
        w.t.vault
            .store_credential(
                spec(Environment::Prod, Audience::Pam),
                "ssh-ed25519 AAAA-secret",
                &op,
            )
            .unwrap();
    let mfa_at = Some(w.t.clock.now());
    let secret = w.t.vault.retrieve_credential(&id, &op, mfa_at).unwrap();
    assert_eq!(secret.as_str(), "ssh-ed25519 AAAA-secret");

    assert_eq!(
        w.t.vault.retrieve_credential(&id, &op, None),
        Err(VaultError::MfaRequired)
    );
    w.t.clock.advance(Duration::seconds(301));
    assert_eq!(
        w.t.vault.retrieve_credential(&id, &op, mfa_at),
        Err(VaultError::MfaRequired)
    );
    assert_eq!(
        w.t.vault
            .retrieve_credential("missing", &op, Some(w.t.clock.now())),
        Err(VaultError::UnknownCredential)
    );

    let ops: Vec<_> = vault_ops(&w)
        .into_iter()
        .map(|r| {
            (
                r["op"].as_str().unwrap().to_string(),
                r["outcome"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    assert_eq!(
        ops,
        [
            ("store", "ok"),
            ("retrieve", "ok"),
            ("retrieve", "MFA_REQUIRED"),
            ("retrieve", "MFA_REQUIRED"),
            ("retrieve", "UNKNOWN_CREDENTIAL"),
        ]
        .map(|(a, b)| (a.to_string(), b.to_string()))
    );
}

#[test]
fn mfa_proof_travels_in_the_access_token() {
    let w = world();
    let op = operator(&w, "op@example.com", &["dev"]);
    let id =
        w.t.vault
            .store_credential(spec(Environment::Dev, Audience::Ciam), "api-key-123", &op)
            .unwrap();
    let plain = w.login("op@example.com").access_token;
    let claims = w.t.auth.authenticate(&plain).unwrap();
    assert_eq!(
        w.t.vault
            .retrieve_credential(&id, &op, claims.mfa_verified_at()),
        Err(VaultError::MfaRequired)
    );
    let strong = w.login_with_mfa(&op, "op@example.com").access_token;
    let claims = w.t.auth.authenticate(&strong).unwrap();
    assert!(w
        .t
        .vault
        .retrieve_credential(&id, &op, claims.mfa_verified_at())
        .is_ok());
}

#[test]
fn authorization_and_validation() {
    let w = world();
    let stranger = w.user("x@example.com");
    assert_eq!(
        w.t.vault
            .store_credential(spec(Environment::Prod, Audience::Pam), "s", &stranger),
        Err(VaultError::Authorization(ReasonCode::NoGrant))
    );
    let op = operator(&w, "op@example.com", &["prod"]);
    assert_eq!(
        w.t.vault
            .store_credential(spec(Environment::Prod, Audience::Pam), "", &op),
        Err(VaultError::Validation(chez_core::validate::Field::Secret))
    );
    let mut short = spec(Environment::Prod, Audience::Pam);
    short.rotation_policy.length = 4;
    assert!(matches!(
        w.t.vault.store_credential(short, "s", &op),
        Err(VaultError::Validation(_))
    ));
    // Scoped to prod, cannot create in dev.
    assert_eq!(
        w.t.vault
            .store_credential(spec(Environment::Dev, Audience::Pam), "s", &op),
        Err(VaultError::EnvironmentMismatch)
    );
}

#[test]
fn environment_separation() {
    let w = world();
    let prod = operator(&w, "prod@example.com", &["prod"]);
    let dev = operator(&w, "dev@example.com", &["dev"]);
    let id =
        w.t.vault
            .store_credential(spec(Environment::Prod, Audience::Pam), "prod-secret", &prod)
            .unwrap();
    let now = Some(w.t.clock.now());
    assert_eq!(
        w.t.vault.retrieve_credential(&id, &dev, now),
        Err(VaultError::EnvironmentMismatch)
    );
    assert_eq!(
        w.t.vault.rotate_as(&id, &dev),
        Err(VaultError::EnvironmentMismatch)
    );
    assert!(w.t.vault.list(&dev, None, None).unwrap().is_empty());
    assert_eq!(w.t.vault.list(&prod, None, None).unwrap().len(), 1);
}

#[test]
fn audience_and_environment_filters_partition_listings() {
    let w = world();
    let op = operator(&w, "op@example.com", &["prod", "test", "dev"]);
    let mut all = Vec::new();
    for env in [Environment::Prod, Environment::Test, Environment::Dev] {
        for aud in [Audience::Ciam, Audience::Pam] {
            let id =
                w.t.vault
                    .store_credential(spec(env, aud), "secret-x", &op)
                    .unwrap();
            all.push((id, env, aud));
        }
    }
    for aud in [Audience::Ciam, Audience::Pam] {
        let listed = w.t.vault.list(&op, Some(aud), None).unwrap();
        assert_eq!(listed.len(), 3);
        assert!(listed.iter().all(|c| c.audience == aud));
    }
    for env in [Environment::Prod, Environment::Test, Environment::Dev] {
        let listed = w.t.vault.list(&op, None, Some(env)).unwrap();
        assert_eq!(listed.len(), 2);
        assert!(listed.iter().all(|c| c.environment == env));
    }
}

#[test]
fn persisted_bytes_never_hold_plaintext() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path().join("chez.json")).unwrap());
    let w = world();
    let op = operator(&w, "op@example.com", &["prod"]);
    // A second vault over a file-backed store, sharing the policy source.
    let master = w.t.store.read(|t| t.clone());
    store
        .write(|t| {
            *t = master.clone();
            Ok::<_, chez_core::store::StoreError>(())
        })
        .unwrap();
    let clock: Arc<dyn Clock> = Arc::new(w.t.clock.clone());
    let policy = Arc::new(PolicyEngine::new(
        store.clone(),
        clock.clone(),
        AuditLog::memory().0,
        None,
    ));
    let vault = Vault::new(
        store.clone(),
        policy,
        clock,
        AuditLog::memory().0,
        VaultKey::generate(),
        "chez",
    );
    let secrets: Vec<String> = (0..20)
        .map(|i| format!("Plaintext-Secret-{i:03}"))
        .collect();
    let mut ids = Vec::new();
    for s in &secrets {
        ids.push(
            vault
                .store_credential(spec(Environment::Prod, Audience::Pam), s, &op)
                .unwrap(),
        );
    }
    let mut rotated = Vec::new();
    for id in &ids[..5] {
        vault.rotate_credential(id, RotationTrigger::Event).unwrap();
        rotated.push(
            vault
                .retrieve_credential(id, &op, Some(w.t.clock.now()))
                .unwrap()
                .to_string(),
        );
    }
    let bytes = std::fs::read(dir.path().join("chez.json")).unwrap();
    let text = String::from_utf8_lossy(&bytes);
    for s in secrets.iter().chain(&rotated) {
        assert!(!text.contains(s.as_str()));
    }
}

#[test]
fn rotation_generates_fresh_policy_conformant_secrets() {
    let w = world();
    let op = operator(&w, "op@example.com", &["prod"]);
    let mut s = spec(Environment::Prod, Audience::Pam);
    s.rotation_policy = RotationPolicy {
        interval_ms: None,
        length: 32,
        charset: Charset::AlphanumericSymbols,
    };
    let id = w.t.vault.store_credential(s, "initial", &op).unwrap();
    let re = regex::Regex::new(r"^[A-Za-z0-9!#$%&*+\-=?@^_]{32}$").unwrap();
    let mut seen = std::collections::HashSet::new();
    let mut last = 1;
    for _ in 0..100 {
        let v =
            w.t.vault
                .rotate_credential(&id, RotationTrigger::Event)
                .unwrap();
        assert_eq!(v, last + 1);
        last = v;
        let secret =
            w.t.vault
                .retrieve_credential(&id, &op, Some(w.t.clock.now()))
                .unwrap();
        assert!(re.is_match(&secret), "{}", secret.as_str());
        assert!(seen.insert(secret.to_string()));
    }
    let rotations = vault_ops(&w).iter().filter(|r| r["op"] == "rotate").count();
    assert_eq!(rotations, 100);
}

#[test]
fn rotated_target_rejects_the_old_secret() {
    let w = world();
    let op = operator(&w, "op@example.com", &["prod"]);
    let target = SimulatedTarget::new();
    w.t.vault.add_hook(target.clone());
    let id =
        w.t.vault
            .store_credential(spec(Environment::Prod, Audience::Pam), "old-password", &op)
            .unwrap();
    target.enroll(&id, "old-password");
    assert!(target.authenticate(&id, "old-password"));
    w.t.vault.rotate_as(&id, &op).unwrap();
    let new =
        w.t.vault
            .retrieve_credential(&id, &op, Some(w.t.clock.now()))
            .unwrap();
    assert!(!target.authenticate(&id, "old-password"));
    assert!(target.authenticate(&id, &new));
}

#[test]
fn scheduled_rotation_follows_next_rotation_times() {
    let w = world();
    let op = operator(&w, "op@example.com", &["prod"]);
    let mut s = spec(Environment::Prod, Audience::Pam);
    s.rotation_policy.interval_ms = Some(60_000);
    let due = w.t.vault.store_credential(s, "a-secret", &op).unwrap();
    let never =
        w.t.vault
            .store_credential(spec(Environment::Prod, Audience::Pam), "b-secret", &op)
            .unwrap();
    assert_eq!(w.t.vault.rotate_due(), 0);
    w.t.clock.advance(Duration::seconds(61));
    assert_eq!(w.t.vault.rotate_due(), 1);
    assert_eq!(w.t.vault.rotate_due(), 0);
    let summary = w.t.vault.list(&op, None, None).unwrap();
    let version = |id: &str| summary.iter().find(|c| c.id == id).unwrap().version;
    assert_eq!(version(&due), 2);
    assert_eq!(version(&never), 1);
    let rec = vault_ops(&w)
        .into_iter()
        .find(|r| r["op"] == "rotate")
        .unwrap();
    assert_eq!(rec["trigger"], "SCHEDULED");
    assert_eq!(rec["actor"], "scheduler");
}

#[test]
fn background_scheduler_rotates_on_wall_clock() {
    let store = Arc::new(Store::in_memory());
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let (audit, sink) = AuditLog::memory();
    let policy = Arc::new(PolicyEngine::new(
        store.clone(),
        clock.clone(),
        audit.clone(),
        None,
    ));
    let vault = Arc::new(Vault::new(
        store.clone(),
        policy,
        clock.clone(),
        audit,
        VaultKey::generate(),
        "chez",
    ));
    // Seed a credential directly; the scheduler needs no actor.
    let w = world();
    let op = operator(&w, "op@example.com", &["prod"]);
    let snapshot = w.t.store.read(|t| t.clone());
    store
        .write(|t| {
            *t = snapshot.clone();
            Ok::<_, chez_core::store::StoreError>(())
        })
        .unwrap();
    let mut s = spec(Environment::Prod, Audience::Pam);
    s.rotation_policy.interval_ms = Some(100);
    vault.store_credential(s, "sched-secret", &op).unwrap();

    let scheduler = vault.start_scheduler(std::time::Duration::from_millis(20));
    std::thread::sleep(std::time::Duration::from_millis(1000));
    scheduler.stop();
    let rotations = sink
        .records()
        .iter()
        .filter(|r| r["op"] == "rotate" && r["trigger"] == "SCHEDULED")
        .count();
    assert!(rotations >= 8, "only {rotations} rotations");
}

#[test]
fn psm_sessions_record_in_order() {
    let w = world();
    let op = operator(&w, "op@example.com", &["prod"]);
    let a = w.t.vault.psm_start(&op, "db-prod-1").unwrap();
    let b = w.t.vault.psm_start(&op, "db-prod-2").unwrap();
    for i in 0..3 {
        w.t.vault
            .psm_record(&a, "command", json!({ "n": i, "s": "a" }))
            .unwrap();
        w.t.vault
            .psm_record(&b, "command", json!({ "n": i, "s": "b" }))
            .unwrap();
    }
    let sa = w.t.vault.psm_end(&a).unwrap();
    assert!(sa.ended_at.unwrap() >= sa.started_at);
    assert_eq!(
        w.t.vault.psm_record(&a, "late", Value::Null),
        Err(VaultError::SessionClosed)
    );
    assert!(matches!(
        w.t.vault.psm_end(&a),
        Err(VaultError::SessionClosed)
    ));
    w.t.vault.psm_end(&b).unwrap();

    let ended: Vec<Value> = vault_ops(&w)
        .into_iter()
        .filter(|r| r["op"] == "psm_end")
        .collect();
    assert_eq!(ended.len(), 2);
    for (rec, tag) in ended.iter().zip(["a", "b"]) {
        let events = rec["session"]["events"].as_array().unwrap();
        assert_eq!(events.len(), 3);
        for (i, e) in events.iter().enumerate() {
            assert_eq!(e["detail"], json!({ "n": i, "s": tag }));
        }
    }
    let stranger = w.user("x@example.com");
    assert!(matches!(
        w.t.vault.psm_start(&stranger, "db"),
        Err(VaultError::Authorization(_))
    ));
}

#[test]
fn config_wiring_uses_the_app_id_for_vault_policy() {
    let w = common::world_with(Config {
        app: "other".into(),
        ..Config::default()
    });
    let op = operator(&w, "op@example.com", &["prod"]);
    assert_eq!(
        w.t.vault
            .store_credential(spec(Environment::Prod, Audience::Pam), "s", &op),
        Err(VaultError::Authorization(ReasonCode::AppNotAllowed))
    );
}
