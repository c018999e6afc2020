use std::process::ExitCode;

use serde_json::{json, Value};

/// What a successful command prints.
pub struct Output {
    pub text: String,
    pub json: Value,
}

impl Output {
    pub fn new(text: impl Into<String>, json: Value) -> Self {
        Self {
            text: text.into(),
            json,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: missing input, unparsable arguments.
    Usage(String),
    /// The command ran and failed. `code` is the service error code.
    Runtime { code: String, message: String },
}

impl CliError {
    pub const USAGE: u8 = 1;
    pub const RUNTIME: u8 = 2;

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn runtime(code: &str, message: impl std::fmt::Display) -> Self {
        CliError::Runtime {
            code: code.to_string(),
            message: message.to_string(),
        }
    }

    pub fn report(&self, json: bool) -> ExitCode {
        let (code, message, exit) = match self {
            CliError::Usage(m) => ("USAGE", m.as_str(), Self::USAGE),
            CliError::Runtime { code, message } => (code.as_str(), message.as_str(), Self::RUNTIME),
        };
        if json {
            println!("{}", json!({ "error": code, "message": message }));
        } else {
            eprintln!("error: {code}: {message}");
        }
        ExitCode::from(exit)
    }
}

macro_rules! coded {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::runtime(e.code(), &e)
            }
        })*
    };
}

coded!(
    chez_core::identity::IdentityError,
    chez_core::authn::AuthError,
    chez_core::rbac::RbacError,
    chez_core::vault::VaultError
);

impl From<chez_core::config::ConfigError> for CliError {
    fn from(e: chez_core::config::ConfigError) -> Self {
        CliError::runtime("CONFIG_ERROR", e)
    }
}

impl From<chez_core::app::AppError> for CliError {
    fn from(e: chez_core::app::AppError) -> Self {
        CliError::runtime("SETUP_ERROR", e)
    }
}

impl From<chez_core::policy::PolicyError> for CliError {
    fn from(e: chez_core::policy::PolicyError) -> Self {
        CliError::runtime("POLICY_ERROR", e)
    }
}
