//! Server configuration: a TOML or JSON file, then `CHEZ_*` environment
//! overrides. Secrets (signing key, vault key, captcha secret) come only
//! from the environment or from key files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::RouteBinding;
use crate::monitor::MonitorConfig;

pub const ENV_CONFIG: &str = "CHEZ_CONFIG";
pub const ENV_SIGNING_KEY: &str = "CHEZ_SIGNING_KEY";
pub const ENV_VAULT_KEY: &str = "CHEZ_VAULT_KEY";
pub const ENV_CAPTCHA_SECRET: &str = "CHEZ_CAPTCHA_SECRET";

pub const MIN_SIGNING_KEY_BYTES: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("missing {0}")]
    Missing(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MailAdapter {
    /// Append messages as JSON lines to `mail.path`.
    Outbox,
    /// POST messages to `mail.url`.
    Relay,
    /// Keep messages in memory (tests, dry runs).
    Memory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MailConfig {
    pub adapter: MailAdapter,
    pub path: PathBuf,
    pub url: Option<String>,
}

impl Default for MailConfig {
    fn default() -> Self {
        Self {
            adapter: MailAdapter::Outbox,
            path: PathBuf::from("chez-outbox.jsonl"),
            url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptchaConfig {
    pub enabled: bool,
    /// siteverify endpoint; the secret comes from `CHEZ_CAPTCHA_SECRET`.
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfaConfig {
    pub issuer: String,
    pub otp_ttl_secs: i64,
    pub max_attempts: u32,
}

impl Default for MfaConfig {
    fn default() -> Self {
        Self {
            issuer: "chez".into(),
            otp_ttl_secs: 300,
            max_attempts: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub listen: String,
    pub base_url: String,
    /// Telemetry site name of this instance.
    pub site: String,
    /// Application id used for the vault's own policy checks.
    pub app: String,
    /// Snapshot file; absent means in-memory only.
    pub storage: Option<PathBuf>,
    pub signing_key_file: Option<PathBuf>,
    pub vault_key_file: Option<PathBuf>,
    /// Audit JSON lines; `-` or absent means stdout.
    pub audit_log: Option<PathBuf>,
    pub traffic_log: Option<PathBuf>,
    pub bcrypt_cost: u32,
    pub rotation_interval_ms: u64,
    /// 0 disables the attribute cache.
    pub pip_cache_ttl_ms: u64,
    pub mail: MailConfig,
    pub captcha: CaptchaConfig,
    pub mfa: MfaConfig,
    pub monitor: MonitorConfig,
    pub routes: Vec<RouteBinding>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            base_url: "http://127.0.0.1:8080".into(),
            site: "local".into(),
            app: "chez".into(),
            storage: None,
            signing_key_file: None,
            vault_key_file: None,
            audit_log: None,
            traffic_log: None,
            bcrypt_cost: crate::password::DEFAULT_COST,
            rotation_interval_ms: 1000,
            pip_cache_ttl_ms: 5000,
            mail: MailConfig::default(),
            captcha: CaptchaConfig::default(),
            mfa: MfaConfig::default(),
            monitor: MonitorConfig::default(),
            routes: Vec::new(),
        }
    }
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let is_json = path.extension().is_some_and(|e| e == "json");
        let parsed = if is_json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| ConfigError::Parse {
            path: path.display().to_string(),
            message: message.trim_end().to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// File (explicit path, else `CHEZ_CONFIG`, else defaults) plus the
    /// process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let env: HashMap<String, String> = std::env::vars().collect();
        let path = path
            .map(Path::to_path_buf)
            .or_else(|| env.get(ENV_CONFIG).map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => Self::from_file(&p)?,
            None => Self::default(),
        };
        cfg.apply_env(&env)?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, env: &HashMap<String, String>) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.trim().parse().map_err(|e: T::Err| ConfigError::Invalid {
                key: key.into(),
                message: e.to_string(),
            })
        }
        for (key, v) in env.iter().filter(|(k, _)| k.starts_with("CHEZ_")) {
            match key.as_str() {
                "CHEZ_LISTEN" => self.listen = v.clone(),
                "CHEZ_BASE_URL" => self.base_url = v.clone(),
                "CHEZ_SITE" => self.site = v.clone(),
                "CHEZ_APP" => self.app = v.clone(),
                "CHEZ_STORAGE" => self.storage = Some(v.into()),
                "CHEZ_SIGNING_KEY_FILE" => self.signing_key_file = Some(v.into()),
                "CHEZ_VAULT_KEY_FILE" => self.vault_key_file = Some(v.into()),
                "CHEZ_AUDIT_LOG" => self.audit_log = Some(v.into()),
                "CHEZ_TRAFFIC_LOG" => self.traffic_log = Some(v.into()),
                "CHEZ_BCRYPT_COST" => self.bcrypt_cost = num(key, v)?,
                "CHEZ_ROTATION_INTERVAL_MS" => self.rotation_interval_ms = num(key, v)?,
                "CHEZ_PIP_CACHE_TTL_MS" => self.pip_cache_ttl_ms = num(key, v)?,
                "CHEZ_CAPTCHA_ENABLED" => self.captcha.enabled = parse_bool(key, v)?,
                "CHEZ_CAPTCHA_URL" => self.captcha.url = Some(v.clone()),
                "CHEZ_HIGH_RISK_THRESHOLD" => self.monitor.high_risk_threshold = num(key, v)?,
                "CHEZ_MAIL_ADAPTER" => {
                    self.mail.adapter = match v.to_ascii_lowercase().as_str() {
                        "outbox" => MailAdapter::Outbox,
                        "relay" => MailAdapter::Relay,
                        "memory" => MailAdapter::Memory,
                        other => {
                            return Err(ConfigError::Invalid {
                                key: key.clone(),
                                message: format!("unknown adapter {other}"),
                            })
                        }
                    }
                }
                "CHEZ_MAIL_PATH" => self.mail.path = v.into(),
                "CHEZ_MAIL_URL" => self.mail.url = Some(v.clone()),
                _ => {}
            }
        }
        self.check()
    }

    fn check(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: &str| ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        };
        if !(4..=31).contains(&self.bcrypt_cost) {
            return Err(invalid("bcrypt_cost", "must be within 4..=31"));
        }
        if !(0.0..=1.0).contains(&self.monitor.high_risk_threshold) {
            return Err(invalid(
                "monitor.high_risk_threshold",
                "must be within [0, 1]",
            ));
        }
        if self.monitor.window_secs <= 0 {
            return Err(invalid("monitor.window_secs", "must be positive"));
        }
        if self.rotation_interval_ms == 0 {
            return Err(invalid("rotation_interval_ms", "must be positive"));
        }
        if self.mail.adapter == MailAdapter::Relay && self.mail.url.is_none() {
            return Err(invalid("mail.url", "required for the relay adapter"));
        }
        Ok(())
    }

    /// Token signing key from `CHEZ_SIGNING_KEY`, else `signing_key_file`.
    pub fn signing_key(&self) -> Result<Vec<u8>, ConfigError> {
        let key = secret(ENV_SIGNING_KEY, self.signing_key_file.as_deref())?.ok_or(
            ConfigError::Missing("signing key (CHEZ_SIGNING_KEY or signing_key_file)"),
        )?;
        if key.len() < MIN_SIGNING_KEY_BYTES {
            return Err(ConfigError::Invalid {
                key: "signing key".into(),
                message: format!("needs at least {MIN_SIGNING_KEY_BYTES} bytes"),
            });
        }
        Ok(key.into_bytes())
    }

    /// Vault master key text (hex or base64) from `CHEZ_VAULT_KEY`, else
    /// `vault_key_file`.
    pub fn vault_key(&self) -> Result<String, ConfigError> {
        secret(ENV_VAULT_KEY, self.vault_key_file.as_deref())?.ok_or(ConfigError::Missing(
            "vault key (CHEZ_VAULT_KEY or vault_key_file)",
        ))
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Invalid {
            key: key.into(),
            message: format!("not a boolean: {v}"),
        }),
    }
}

fn secret(var: &str, file: Option<&Path>) -> Result<Option<String>, ConfigError> {
    if let Ok(v) = std::env::var(var) {
        if !v.trim().is_empty() {
            return Ok(Some(v.trim().to_string()));
        }
    }
    match file {
        Some(p) => std::fs::read_to_string(p)
            .map(|s| Some(s.trim().to_string()))
            .map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            }),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_file_with_routes() {
        let text = r#"
listen = "0.0.0.0:9000"
storage = "/tmp/chez.json"

[captcha]
enabled = true

[monitor]
window_secs = 30

[[routes]]
path_prefix = "/api/clients"
service = "resources"
resource_kind = "client"
app = "banking"
action_map = { GET = "read", POST = "create" }
"#;
        let cfg = Config::parse(text, Path::new("chez.toml")).unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000");
        assert!(cfg.captcha.enabled);
        assert_eq!(cfg.monitor.window_secs, 30);
        assert_eq!(cfg.monitor.detector.warmup, 10);
        assert_eq!(cfg.routes.len(), 1);
        assert_eq!(cfg.routes[0].action_map["POST"], "create");
    }

    #[test]
    fn parse_errors_name_file_and_line() {
        let err = Config::parse("listen = \n", Path::new("bad.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("bad.toml:"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
        let err = Config::parse("{\n \"lisen\": 1}", Path::new("bad.json")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn env_overrides_file() {
        let mut cfg = Config::default();
        let env: HashMap<String, String> = [
            ("CHEZ_LISTEN", "127.0.0.1:1"),
            ("CHEZ_CAPTCHA_ENABLED", "yes"),
            ("CHEZ_BCRYPT_COST", "5"),
            ("CHEZ_HIGH_RISK_THRESHOLD", "0.5"),
            ("PATH", "/bin"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        cfg.apply_env(&env).unwrap();
        assert_eq!(cfg.listen, "127.0.0.1:1");
        assert!(cfg.captcha.enabled);
        assert_eq!(cfg.bcrypt_cost, 5);
        assert_eq!(cfg.monitor.high_risk_threshold, 0.5);

        let bad: HashMap<String, String> =
            [("CHEZ_BCRYPT_COST".to_string(), "x".to_string())].into();
        assert!(matches!(
            cfg.apply_env(&bad),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn key_files_are_read_and_checked() {
        let dir = tempfile::tempdir().unwrap();
        let short = dir.path().join("short.key");
        std::fs::write(&short, "abc\n").unwrap();
        let cfg = Config {
            signing_key_file: Some(short),
            ..Config::default()
        };
        if std::env::var(ENV_SIGNING_KEY).is_err() {
            assert!(matches!(
                cfg.signing_key(),
                Err(ConfigError::Invalid { .. })
            ));
            assert!(matches!(
                Config::default().signing_key(),
                Err(ConfigError::Missing(_))
            ));
        }
    }
}
