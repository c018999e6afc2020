use std::io::{BufReader, IsTerminal, Read};
use std::path::Path;
use std::sync::Arc;

use chez_core::app::{App, Keys};
use chez_core::audit::{self, AuditFilter, StderrSink};
use chez_core::authn::{Credentials, LoginOutcome};
use chez_core::config::Config;
use chez_core::policy::parse_policy_documents;
use chez_core::rbac::Actor;
use chez_core::vault::{
    Audience, Charset, CredentialKind, Environment, NewCredential, RotationPolicy,
};
use serde_json::{json, Value};
use zeroize::Zeroizing;

use crate::output::{CliError, Output};
use crate::{
    AuditCommand, Cli, Command, GroupCommand, PermCommand, PermissionRef, PolicyCommand,
    SchemaCommand, VaultCommand,
};

pub const ENV_TOKEN: &str = "CHEZ_TOKEN";
pub const ENV_ADMIN_PASSWORD: &str = "CHEZ_ADMIN_PASSWORD";
pub const ENV_PASSWORD: &str = "CHEZ_PASSWORD";
pub const ENV_MFA_TOKEN: &str = "CHEZ_MFA_TOKEN";
pub const ENV_MFA_CODE: &str = "CHEZ_MFA_CODE";
pub const ENV_VAULT_SECRET: &str = "CHEZ_VAULT_SECRET";

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<Output> {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Bootstrap { email, force } => {
            let password = secret(ENV_ADMIN_PASSWORD, "admin password")?;
            let app = open(config, Keys::Ephemeral)?;
            let r = app.identity.bootstrap(&email, &password, force)?;
            Ok(Output::new(
                format!("master {}\nroot user {} <{email}>", r.master_id, r.user_id),
                json!(r),
            ))
        }
        Command::Serve => serve(config),
        Command::Login {
            identifier,
            device_id,
        } => {
            let mut creds = Credentials::default();
            creds.identifier = identifier;
            creds.password = secret(ENV_PASSWORD, "password")?.to_string();
            creds.device_id = device_id;
            let app = open(config, Keys::Required)?;
            let outcome = app.auth.login(creds, false)?;
            let text = match &outcome {
                LoginOutcome::Authenticated(p) => {
                    format!(
                        "access_token {}\nrefresh_token {}",
                        p.access_token, p.refresh_token
                    )
                }
                LoginOutcome::MfaRequired {
                    mfa_token, channel, ..
                } => {
                    format!("second factor required ({channel:?})\nmfa_token {mfa_token}")
                }
            };
            Ok(Output::new(text, json!(outcome)))
        }
        Command::LoginMfa => {
            let token = env_required(ENV_MFA_TOKEN)?;
            let code = secret(ENV_MFA_CODE, "code")?;
            let app = open(config, Keys::Required)?;
            let p = app.auth.complete_mfa(&token, &code)?;
            Ok(Output::new(
                format!(
                    "access_token {}\nrefresh_token {}",
                    p.access_token, p.refresh_token
                ),
                json!(p),
            ))
        }
        Command::Perm(PermCommand::Load { file }) => {
            let text = read_file(&file)?;
            let app = open(config, Keys::Ephemeral)?;
            let n = app.rbac.load_permission_catalog(&text)?;
            Ok(Output::new(
                format!("loaded {n} permissions"),
                json!({ "loaded": n }),
            ))
        }
        Command::Policy(PolicyCommand::Load { file }) => {
            let docs = parse_policy_documents(&read_file(&file)?)?;
            let app = open(config, Keys::Ephemeral)?;
            let mut ids = Vec::new();
            for doc in docs {
                ids.push(app.policy.store_policy(doc)?.0);
            }
            let version = app.policy.store_version();
            Ok(Output::new(
                format!("stored {} policies, store version {version}", ids.len()),
                json!({ "stored": ids, "store_version": version }),
            ))
        }
        Command::Group(cmd) => {
            let app = open(config, Keys::Required)?;
            let actor = actor(&app)?;
            group(&app, &actor, cmd)
        }
        Command::Vault(cmd) => {
            let app = open(config, Keys::Required)?;
            vault(&app, cmd)
        }
        Command::Audit(AuditCommand::Query {
            file,
            op,
            actor,
            since,
        }) => {
            let path = file
                .or(config.audit_log)
                .ok_or_else(|| CliError::usage("no audit file: pass --file or set audit_log"))?;
            let since = since
                .map(|s| {
                    chrono::DateTime::parse_from_rfc3339(&s)
                        .map(|t| t.to_utc())
                        .map_err(|e| CliError::usage(format!("--since: {e}")))
                })
                .transpose()?;
            let f = std::fs::File::open(&path)
                .map_err(|e| CliError::runtime("IO_ERROR", format!("{}: {e}", path.display())))?;
            let records = audit::query(BufReader::new(f), &AuditFilter { op, actor, since })
                .map_err(|e| CliError::runtime("IO_ERROR", e))?;
            let text = records
                .iter()
                .map(Value::to_string)
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output::new(text, Value::Array(records)))
        }
        Command::Schema(SchemaCommand::Dump) => {
            let schema = chez_core::store::schema();
            Ok(Output::new(
                serde_json::to_string_pretty(&schema).unwrap_or_default(),
                schema,
            ))
        }
    }
}

fn open(config: Config, keys: Keys) -> Result<App> {
    Ok(App::from_config_with(config, keys, Arc::new(StderrSink))?)
}

fn serve(config: Config) -> Result<Output> {
    let listen = config.listen.clone();
    let app = Arc::new(App::from_config(config, Keys::Required)?);
    let scheduler = app.start_scheduler();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime("IO_ERROR", e))?;
    let served = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&listen).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        chez_core::http::serve(app, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    });
    scheduler.stop();
    served.map_err(|e| CliError::runtime("IO_ERROR", format!("{listen}: {e}")))?;
    Ok(Output::new("", json!({ "status": "stopped" })))
}

fn actor(app: &App) -> Result<Actor> {
    let token = env_required(ENV_TOKEN)?;
    let claims = app.auth.authenticate(&token)?;
    Ok(app.rbac.actor(&claims.user_id)?)
}

fn permission_id(app: &App, p: &PermissionRef) -> Result<String> {
    app.store
        .read(|t| t.permission_by(&p.module, &p.action).map(|p| p.id.clone()))
        .ok_or_else(|| {
            CliError::runtime("UNKNOWN_PERMISSION", format!("{}/{}", p.module, p.action))
        })
}

fn group(app: &App, actor: &Actor, cmd: GroupCommand) -> Result<Output> {
    let master = actor.master_id.as_str();
    let done = |text: String, value: Value| Ok(Output::new(text, value));
    match cmd {
        GroupCommand::Create { name } => {
            let g = app.rbac.upsert_group(&name, master, actor, None)?;
            done(format!("group {} {}", g.id, g.name), json!(g))
        }
        GroupCommand::List => {
            let groups = app.rbac.list_groups(actor);
            let text = groups
                .iter()
                .map(|g| format!("{} {}", g.id, g.name))
                .collect::<Vec<_>>()
                .join("\n");
            done(text, json!(groups))
        }
        GroupCommand::Show { group_id } => {
            let v = app.rbac.view_group(&group_id, actor)?;
            let value = json!(v);
            done(
                serde_json::to_string_pretty(&value).unwrap_or_default(),
                value,
            )
        }
        GroupCommand::Rename { group_id, name } => {
            let g = app
                .rbac
                .upsert_group(&name, master, actor, Some(&group_id))?;
            done(format!("group {} {}", g.id, g.name), json!(g))
        }
        GroupCommand::Delete { group_id } => {
            app.rbac.delete_group(&group_id, master, actor)?;
            done(
                format!("deleted {group_id}"),
                json!({ "deleted": group_id }),
            )
        }
        GroupCommand::AddMember { group_id, user_id } => {
            app.rbac
                .modify_group_member(&user_id, &group_id, master, actor, true)?;
            done(
                format!("{user_id} added to {group_id}"),
                json!({ "group_id": group_id, "added": user_id }),
            )
        }
        GroupCommand::RemoveMember { group_id, user_id } => {
            app.rbac
                .modify_group_member(&user_id, &group_id, master, actor, false)?;
            done(
                format!("{user_id} removed from {group_id}"),
                json!({ "group_id": group_id, "removed": user_id }),
            )
        }
        GroupCommand::Grant {
            group_id,
            permission,
            tags,
        } => {
            let pid = permission_id(app, &permission)?;
            let gp = app
                .rbac
                .add_group_permission(&group_id, &pid, actor, &tags)?;
            done(
                format!(
                    "granted {}/{} to {group_id} tags [{}]",
                    permission.module,
                    permission.action,
                    gp.tags.join(", ")
                ),
                json!(gp),
            )
        }
        GroupCommand::SetTags {
            group_id,
            permission,
            tags,
        } => {
            let pid = permission_id(app, &permission)?;
            app.rbac
                .update_group_permission_tags(&group_id, &pid, actor, &tags)?;
            done(
                format!(
                    "tags of {}/{} on {group_id} updated",
                    permission.module, permission.action
                ),
                json!({ "group_id": group_id, "permission_id": pid, "tags": tags }),
            )
        }
    }
}

fn parse<T: std::str::FromStr>(flag: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("--{flag}: unrecognized value {value:?}")))
}

fn vault(app: &App, cmd: VaultCommand) -> Result<Output> {
    let token = env_required(ENV_TOKEN)?;
    let claims = app.auth.authenticate(&token)?;
    let user = claims.user_id.as_str();
    match cmd {
        VaultCommand::Store {
            kind,
            audience,
            env,
            rotation_interval_ms,
            length,
            charset,
        } => {
            let mut policy = RotationPolicy {
                interval_ms: rotation_interval_ms,
                ..RotationPolicy::default()
            };
            if let Some(n) = length {
                policy.length = n;
            }
            if let Some(c) = charset {
                policy.charset = serde_json::from_value::<Charset>(json!(c))
                    .map_err(|_| CliError::usage(format!("--charset: unrecognized value {c:?}")))?;
            }
            let spec = NewCredential {
                kind: parse::<CredentialKind>("kind", &kind)?,
                audience: parse::<Audience>("audience", &audience)?,
                environment: parse::<Environment>("env", &env)?,
                rotation_policy: policy,
            };
            let secret = secret(ENV_VAULT_SECRET, "secret")?;
            let id = app.vault.store_credential(spec, &secret, user)?;
            Ok(Output::new(format!("stored {id}"), json!({ "id": id })))
        }
        VaultCommand::Get { id } => {
            let secret = app
                .vault
                .retrieve_credential(&id, user, claims.mfa_verified_at())?;
            Ok(Output::new(
                secret.as_str(),
                json!({ "id": id, "secret": secret.as_str() }),
            ))
        }
        VaultCommand::Rotate { id } => {
            let version = app.vault.rotate_as(&id, user)?;
            Ok(Output::new(
                format!("{id} rotated to version {version}"),
                json!({ "id": id, "version": version }),
            ))
        }
        VaultCommand::List { audience, env } => {
            let audience = audience
                .map(|a| parse::<Audience>("audience", &a))
                .transpose()?;
            let env = env.map(|e| parse::<Environment>("env", &e)).transpose()?;
            let list = app.vault.list(user, audience, env)?;
            let text = list
                .iter()
                .map(|c| {
                    let v = json!(c);
                    format!(
                        "{} {} {} {} v{}",
                        c.id,
                        v["kind"].as_str().unwrap_or(""),
                        v["audience"].as_str().unwrap_or(""),
                        v["environment"].as_str().unwrap_or(""),
                        c.version
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output::new(text, json!(list)))
        }
    }
}

fn env_required(key: &str) -> Result<String> {
    std::env::var(key)
        .ok()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| CliError::usage(format!("${key} is not set")))
}

/// A secret from the environment, a no-echo prompt, or piped stdin.
/// Never from the command line.
fn secret(env_key: &str, what: &str) -> Result<Zeroizing<String>> {
    if let Ok(v) = std::env::var(env_key) {
        if !v.is_empty() {
            return Ok(Zeroizing::new(v));
        }
    }
    let value = if std::io::stdin().is_terminal() {
        rpassword::prompt_password(format!("{what}: "))
            .map_err(|e| CliError::runtime("IO_ERROR", e))?
    } else {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| CliError::runtime("IO_ERROR", e))?;
        s
    };
    let value = Zeroizing::new(value);
    let trimmed = value.trim_end_matches(['\r', '\n']);
    if trimmed.is_empty() {
        return Err(CliError::usage(format!(
            "no {what}: set ${env_key} or pipe it on stdin"
        )));
    }
    Ok(Zeroizing::new(trimmed.to_string()))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime("IO_ERROR", format!("{}: {e}", path.display())))
}
