//! Service wiring shared by the HTTP server, the CLI and the tests.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::Duration;

use crate::audit::{AuditLog, AuditSink, JsonLinesFile, MemorySink, StdoutSink};
use crate::authn::AuthService;
use crate::captcha::{CaptchaVerifier, RemoteCaptcha, StaticCaptcha};
use crate::clock::{ManualClock, SharedClock, SystemClock};
use crate::config::{Config, ConfigError, MailAdapter, ENV_CAPTCHA_SECRET};
use crate::gateway::{Gateway, ResourceStoreBackend, RouteBinding};
use crate::identity::IdentityService;
use crate::mail::{HttpRelayMailer, MailClient, MemoryMailSink, OutboxMailer};
use crate::mfa::{MfaService, MfaSettings, TotpParams};
use crate::monitor::Monitor;
use crate::password::{BcryptHasher, PasswordHasher};
use crate::policy::PolicyEngine;
use crate::rbac::RbacService;
use crate::store::{Store, StoreError};
use crate::token::{TokenService, TokenTtls};
use crate::vault::{RotationScheduler, Vault, VaultError, VaultKey};

/// Service id of the built-in resource backend.
pub const RESOURCE_SERVICE: &str = "resources";

/// Captcha response accepted by the in-memory test wiring.
pub const TEST_CAPTCHA: &str = "test-captcha-ok";

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("storage: {0}")]
    Storage(#[from] StoreError),
    #[error("vault: {0}")]
    Vault(#[from] VaultError),
    #[error("{0}")]
    Setup(String),
}

/// Whether missing keys are an error or replaced by throwaway ones.
/// Commands that never issue tokens or open the vault can run without them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keys {
    Required,
    Ephemeral,
}

/// External collaborators that differ between production and tests.
pub struct Parts {
    pub clock: SharedClock,
    pub audit: AuditLog,
    pub traffic: AuditLog,
    pub mail: Arc<dyn MailClient>,
    pub captcha: Arc<dyn CaptchaVerifier>,
    pub hasher: Arc<dyn PasswordHasher>,
    pub store: Arc<Store>,
    pub signing_key: Vec<u8>,
    pub vault_key: VaultKey,
}

pub struct App {
    pub config: Config,
    pub clock: SharedClock,
    pub store: Arc<Store>,
    pub audit: AuditLog,
    pub tokens: Arc<TokenService>,
    pub identity: Arc<IdentityService>,
    pub mfa: Arc<MfaService>,
    pub auth: Arc<AuthService>,
    pub policy: Arc<PolicyEngine>,
    pub rbac: Arc<RbacService>,
    pub monitor: Arc<Monitor>,
    pub vault: Arc<Vault>,
    pub gateway: Arc<Gateway>,
}

impl App {
    pub fn assemble(config: Config, parts: Parts) -> Result<Self, AppError> {
        let Parts {
            clock,
            audit,
            traffic,
            mail,
            captcha,
            hasher,
            store,
            signing_key,
            vault_key,
        } = parts;
        let tokens = Arc::new(TokenService::new(
            signing_key,
            TokenTtls::default(),
            clock.clone(),
        ));
        let monitor = Arc::new(Monitor::new(config.monitor.clone(), audit.clone()));
        let mfa = Arc::new(MfaService::new(
            store.clone(),
            mail.clone(),
            hasher.clone(),
            clock.clone(),
            audit.clone(),
            MfaSettings {
                otp_ttl: Duration::seconds(config.mfa.otp_ttl_secs),
                max_attempts: config.mfa.max_attempts,
                issuer: config.mfa.issuer.clone(),
                totp: TotpParams::default(),
            },
        ));
        let identity = Arc::new(IdentityService::new(
            store.clone(),
            tokens.clone(),
            mail,
            captcha.clone(),
            hasher.clone(),
            clock.clone(),
            audit.clone(),
            config.base_url.clone(),
        ));
        let auth = Arc::new(AuthService::new(
            store.clone(),
            tokens.clone(),
            mfa.clone(),
            monitor.clone(),
            captcha,
            hasher,
            clock.clone(),
            audit.clone(),
            config.site.clone(),
        ));
        let cache_ttl = (config.pip_cache_ttl_ms > 0)
            .then(|| Duration::milliseconds(config.pip_cache_ttl_ms as i64));
        let policy = Arc::new(PolicyEngine::new(
            store.clone(),
            clock.clone(),
            audit.clone(),
            cache_ttl,
        ));
        let rbac = Arc::new(RbacService::new(
            store.clone(),
            clock.clone(),
            audit.clone(),
        ));
        let vault = Arc::new(Vault::new(
            store.clone(),
            policy.clone(),
            clock.clone(),
            audit.clone(),
            vault_key,
            config.app.clone(),
        ));
        let gateway = Arc::new(Gateway::new(
            auth.clone(),
            policy.clone(),
            store.clone(),
            Some(monitor.clone()),
            config.site.clone(),
            clock.clone(),
            traffic,
        ));
        gateway.register_service(
            RESOURCE_SERVICE,
            Arc::new(ResourceStoreBackend::new(store.clone())),
        );
        for route in &config.routes {
            gateway
                .register_route(route.clone())
                .map_err(|e| AppError::Setup(e.to_string()))?;
        }
        Ok(Self {
            config,
            clock,
            store,
            audit,
            tokens,
            identity,
            mfa,
            auth,
            policy,
            rbac,
            monitor,
            vault,
            gateway,
        })
    }

    /// Production wiring from configuration. Unconfigured logs go to stdout.
    pub fn from_config(config: Config, keys: Keys) -> Result<Self, AppError> {
        Self::from_config_with(config, keys, Arc::new(StdoutSink))
    }

    /// As [`App::from_config`], with `fallback` receiving any log that has
    /// no configured path.
    pub fn from_config_with(
        config: Config,
        keys: Keys,
        fallback: Arc<dyn AuditSink>,
    ) -> Result<Self, AppError> {
        let signing_key = match (config.signing_key(), keys) {
            (Ok(k), _) => k,
            (Err(ConfigError::Missing(_)), Keys::Ephemeral) => random_key(),
            (Err(e), _) => return Err(e.into()),
        };
        let vault_key = match (config.vault_key(), keys) {
            (Ok(k), _) => VaultKey::parse(&k)?,
            (Err(ConfigError::Missing(_)), Keys::Ephemeral) => VaultKey::generate(),
            (Err(e), _) => return Err(e.into()),
        };
        let store = Arc::new(match &config.storage {
            Some(p) => Store::open(p)?,
            None => Store::in_memory(),
        });
        let mail: Arc<dyn MailClient> = match config.mail.adapter {
            MailAdapter::Outbox => Arc::new(OutboxMailer::new(config.mail.path.clone())),
            MailAdapter::Relay => Arc::new(HttpRelayMailer::new(
                config.mail.url.clone().unwrap_or_default(),
            )),
            MailAdapter::Memory => MemoryMailSink::new(),
        };
        let captcha: Arc<dyn CaptchaVerifier> = match (&config.captcha.url, config.captcha.enabled)
        {
            (Some(url), _) => Arc::new(RemoteCaptcha::new(
                url.clone(),
                std::env::var(ENV_CAPTCHA_SECRET).unwrap_or_default(),
            )),
            (None, true) => {
                return Err(AppError::Setup(
                    "captcha enabled but captcha.url not set".into(),
                ))
            }
            // Never consulted while captcha is disabled.
            (None, false) => Arc::new(StaticCaptcha::new(random_hex(16))),
        };
        let parts = Parts {
            clock: Arc::new(SystemClock),
            audit: AuditLog::new(sink(config.audit_log.as_deref(), &fallback)?),
            traffic: AuditLog::new(sink(config.traffic_log.as_deref(), &fallback)?),
            mail,
            captcha,
            hasher: Arc::new(BcryptHasher::new(config.bcrypt_cost)),
            store,
            signing_key,
            vault_key,
        };
        Self::assemble(config, parts)
    }

    /// Fully in-memory wiring on a manual clock, with every sink exposed.
    pub fn in_memory(config: Config) -> TestApp {
        let clock = ManualClock::fixed();
        let (audit, audit_sink) = AuditLog::memory();
        let (traffic, traffic_sink) = AuditLog::memory();
        let mail = MemoryMailSink::new();
        let parts = Parts {
            clock: Arc::new(clock.clone()),
            audit,
            traffic,
            mail: mail.clone(),
            captcha: Arc::new(StaticCaptcha::new(TEST_CAPTCHA)),
            hasher: Arc::new(BcryptHasher::new(4)),
            store: Arc::new(Store::in_memory()),
            signing_key: random_key(),
            vault_key: VaultKey::generate(),
        };
        let app = Self::assemble(config, parts).expect("in-memory wiring");
        TestApp {
            app,
            clock,
            audit: audit_sink,
            traffic: traffic_sink,
            mail,
        }
    }

    pub fn captcha_enabled(&self) -> bool {
        self.config.captcha.enabled
    }

    /// Starts the credential rotation ticker.
    pub fn start_scheduler(&self) -> RotationScheduler {
        self.vault.start_scheduler(std::time::Duration::from_millis(
            self.config.rotation_interval_ms,
        ))
    }

    /// Convenience route over the built-in resource backend.
    pub fn resource_route(
        prefix: &str,
        kind: &str,
        app: &str,
        actions: &[(&str, &str)],
    ) -> RouteBinding {
        RouteBinding {
            path_prefix: prefix.into(),
            service: RESOURCE_SERVICE.into(),
            resource_kind: kind.into(),
            action_map: actions
                .iter()
                .map(|(m, a)| (m.to_string(), a.to_string()))
                .collect::<BTreeMap<_, _>>(),
            app: app.into(),
        }
    }
}

pub struct TestApp {
    pub app: App,
    pub clock: ManualClock,
    pub audit: Arc<MemorySink>,
    pub traffic: Arc<MemorySink>,
    pub mail: Arc<MemoryMailSink>,
}

impl std::ops::Deref for TestApp {
    type Target = App;

    fn deref(&self) -> &App {
        &self.app
    }
}

fn sink(
    path: Option<&std::path::Path>,
    fallback: &Arc<dyn AuditSink>,
) -> Result<Arc<dyn AuditSink>, AppError> {
    match path {
        None => Ok(fallback.clone()),
        Some(p) if p.as_os_str() == "-" => Ok(Arc::new(StdoutSink)),
        Some(p) => JsonLinesFile::open(p)
            .map(|f| Arc::new(f) as Arc<dyn AuditSink>)
            .map_err(|e| AppError::Setup(format!("{}: {e}", p.display()))),
    }
}

fn random_key() -> Vec<u8> {
    random_hex(32).into_bytes()
}

fn random_hex(n: usize) -> String {
    use rand::RngCore;
    let mut b = vec![0u8; n];
    rand::rngs::OsRng.fill_bytes(&mut b);
    b.iter().map(|x| format!("{x:02x}")).collect()
}
