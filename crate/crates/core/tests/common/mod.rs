#![allow(dead_code)]

use chez_core::app::{App, TestApp};
use chez_core::authn::{Credentials, LoginOutcome, TokenPair};
use chez_core::config::Config;
use chez_core::identity::RegistrationInput;
use chez_core::model::Id;
use chez_core::rbac::Actor;

pub const PASSWORD: &str = "Str0ng!Passw0rd";

pub const CATALOG: &str = r#"[
  {"module": "client", "action": "create", "apps": ["banking"], "role": "user", "enabled": true},
  {"module": "client", "action": "read", "apps": ["banking"], "role": "user", "enabled": true},
  {"module": "client", "action": "delete", "apps": ["banking"], "role": "admin", "enabled": true},
  {"module": "vault", "action": "create", "apps": ["chez"], "role": "user", "enabled": true},
  {"module": "vault", "action": "read", "apps": ["chez"], "role": "user", "enabled": true},
  {"module": "vault", "action": "rotate", "apps": ["chez"], "role": "user", "enabled": true},
  {"module": "vault", "action": "list", "apps": ["chez"], "role": "user", "enabled": true},
  {"module": "vault", "action": "session", "apps": ["chez"], "role": "user", "enabled": true}
]"#;

/// Bootstrapped in-memory deployment with the test catalog loaded.
pub struct World {
    pub t: TestApp,
    pub root: Actor,
}

pub fn world() -> World {
    world_with(Config::default())
}

pub fn world_with(config: Config) -> World {
    let t = App::in_memory(config);
    let r = t
        .identity
        .bootstrap("root@example.com", PASSWORD, false)
        .unwrap();
    t.rbac.load_permission_catalog(CATALOG).unwrap();
    let root = t.rbac.actor(&r.user_id).unwrap();
    World { t, root }
}

impl World {
    pub fn perm(&self, module: &str, action: &str) -> Id {
        self.t
            .store
            .read(|s| s.permission_by(module, action).map(|p| p.id.clone()))
            .unwrap()
    }

    /// Registers, verifies and returns a new user id.
    pub fn user(&self, email: &str) -> Id {
        let n = self.t.store.read(|s| s.users().count());
        let r = self
            .t
            .identity
            .register_user(
                RegistrationInput {
                    name: "Test User".into(),
                    email: email.into(),
                    phone: format!("+1555{:06}", n),
                    password: PASSWORD.into(),
                    dob: "01/02/1985".into(),
                    captcha_response: None,
                },
                false,
            )
            .unwrap();
        let link = self.t.mail.last_to(email).unwrap().link.unwrap();
        self.t
            .identity
            .verify_email(link.split_once("token=").unwrap().1)
            .unwrap();
        r.user_id
    }

    /// Root-owned group holding `grants` (module, action, tags), with `members`.
    pub fn group(&self, name: &str, members: &[&str], grants: &[(&str, &str, &[&str])]) -> Id {
        let g = self
            .t
            .rbac
            .upsert_group(name, &self.root.master_id, &self.root, None)
            .unwrap();
        for m in members {
            self.t
                .rbac
                .modify_group_member(m, &g.id, &self.root.master_id, &self.root, true)
                .unwrap();
        }
        for (module, action, tags) in grants {
            let tags: Vec<String> = tags.iter().map(|s| s.to_string()).collect();
            self.t
                .rbac
                .add_group_permission(&g.id, &self.perm(module, action), &self.root, &tags)
                .unwrap();
        }
        g.id
    }

    pub fn login(&self, email: &str) -> TokenPair {
        let mut c = Credentials::default();
        c.identifier = email.into();
        c.password = PASSWORD.into();
        match self.t.auth.login(c, false).unwrap() {
            LoginOutcome::Authenticated(p) => p,
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Login through an email second factor, giving an access token that
    /// carries a fresh MFA proof.
    pub fn login_with_mfa(&self, user_id: &str, email: &str) -> TokenPair {
        if !self.t.mfa.status(user_id).enabled {
            self.t.mfa.request_toggle(user_id, "EMAIL").unwrap();
            let code = self.t.mail.last_to(email).unwrap().code.unwrap();
            self.t.mfa.confirm_toggle(user_id, &code, true).unwrap();
        }
        let mut c = Credentials::default();
        c.identifier = email.into();
        c.password = PASSWORD.into();
        let LoginOutcome::MfaRequired { mfa_token, .. } = self.t.auth.login(c, false).unwrap()
        else {
            panic!("expected an MFA challenge");
        };
        let code = self.t.mail.last_to(email).unwrap().code.unwrap();
        self.t.auth.complete_mfa(&mfa_token, &code).unwrap()
    }
}
