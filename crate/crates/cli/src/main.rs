use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

use output::{CliError, Output};

/// Zero-trust identity, access and privileged-credential server.
#[derive(Debug, Parser)]
#[command(name = "chez", version)]
pub struct Cli {
    /// Configuration file (TOML or JSON). Defaults to $CHEZ_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the first master and its root administrator.
    /// The password is read from $CHEZ_ADMIN_PASSWORD or stdin.
    Bootstrap {
        #[arg(long)]
        email: String,
        /// Create another root even if one exists.
        #[arg(long)]
        force: bool,
    },
    /// Run the HTTP server, gateway and rotation scheduler.
    Serve,
    /// Sign in and print a token pair. The password is read from
    /// $CHEZ_PASSWORD or stdin.
    Login {
        /// Email address or phone number.
        #[arg(long)]
        identifier: String,
        #[arg(long)]
        device_id: Option<String>,
    },
    /// Complete a second-factor challenge. Reads the challenge token from
    /// $CHEZ_MFA_TOKEN and the code from $CHEZ_MFA_CODE or stdin.
    LoginMfa,
    /// Permission catalog.
    #[command(subcommand)]
    Perm(PermCommand),
    /// Policy documents.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Group administration. Acts as the holder of $CHEZ_TOKEN.
    #[command(subcommand)]
    Group(GroupCommand),
    /// Credential vault. Acts as the holder of $CHEZ_TOKEN.
    #[command(subcommand)]
    Vault(VaultCommand),
    /// Audit log.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Storage schema.
    #[command(subcommand)]
    Schema(SchemaCommand),
}

#[derive(Debug, Subcommand)]
pub enum PermCommand {
    /// Replace the permission catalog with the entries in a JSON file.
    Load { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum PolicyCommand {
    /// Upsert one policy document or an array of them.
    Load { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum GroupCommand {
    Create {
        #[arg(long)]
        name: String,
    },
    List,
    Show {
        group_id: String,
    },
    Rename {
        group_id: String,
        #[arg(long)]
        name: String,
    },
    Delete {
        group_id: String,
    },
    AddMember {
        group_id: String,
        user_id: String,
    },
    RemoveMember {
        group_id: String,
        user_id: String,
    },
    /// Grant a permission, optionally scoped by tags.
    Grant {
        group_id: String,
        #[command(flatten)]
        permission: PermissionRef,
        #[arg(long = "tag")]
        tags: Vec<String>,
    },
    /// Replace the tags of an existing grant.
    SetTags {
        group_id: String,
        #[command(flatten)]
        permission: PermissionRef,
        #[arg(long = "tag")]
        tags: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct PermissionRef {
    #[arg(long)]
    pub module: String,
    #[arg(long)]
    pub action: String,
}

#[derive(Debug, Subcommand)]
pub enum VaultCommand {
    /// Store a credential. The secret is read from $CHEZ_VAULT_SECRET or stdin.
    Store {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        audience: String,
        #[arg(long)]
        env: String,
        /// Scheduled rotation interval.
        #[arg(long)]
        rotation_interval_ms: Option<u64>,
        #[arg(long)]
        length: Option<usize>,
        /// alphanumeric, alphanumeric_symbols or hex.
        #[arg(long)]
        charset: Option<String>,
    },
    /// Print a secret. Needs a token from a login with a recent second factor.
    Get {
        id: String,
    },
    Rotate {
        id: String,
    },
    List {
        #[arg(long)]
        audience: Option<String>,
        #[arg(long)]
        env: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Print matching audit lines.
    Query {
        /// Audit file; defaults to the configured audit_log.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long)]
        op: Option<String>,
        #[arg(long)]
        actor: Option<String>,
        /// RFC 3339 lower bound on the record time.
        #[arg(long)]
        since: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SchemaCommand {
    Dump,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(CliError::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if matches!(cli.command, Command::Serve) {
        tracing_subscriber::fmt()
            .with_env_filter(
                tracing_subscriber::EnvFilter::try_from_default_env()
                    .unwrap_or_else(|_| "info".into()),
            )
            .with_writer(std::io::stderr)
            .init();
    }
    let json = cli.json;
    match commands::run(cli) {
        Ok(out) => {
            out.print(json);
            ExitCode::SUCCESS
        }
        Err(e) => e.report(json),
    }
}

impl Output {
    fn print(&self, json: bool) {
        if json {
            println!("{}", self.json);
        } else if !self.text.is_empty() {
            println!("{}", self.text);
        }
    }
}
