//! Zero-trust customer identity and privileged access management.

pub mod app;
pub mod audit;
pub mod authn;
pub mod captcha;
pub mod clock;
pub mod config;
pub mod gateway;
pub mod http;
pub mod identity;
pub mod mail;
pub mod mfa;
pub mod model;
pub mod monitor;
pub mod password;
pub mod policy;
pub mod rbac;
pub mod store;
pub mod token;
pub mod validate;
pub mod vault;
