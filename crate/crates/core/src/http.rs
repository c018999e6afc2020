//! JSON-over-HTTP surface. Identity, MFA, group administration, vault and
//! telemetry endpoints are served directly; every other path falls through
//! to the gateway.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::app::App;
use crate::authn::{AuthError, Credentials};
use crate::gateway::GatewayRequest;
use crate::identity::{AddressInput, IdentityError, IdpConfig, ProfileUpdate, RegistrationInput};
use crate::mfa::MfaError;
use crate::model::Role;
use crate::monitor::{aggregate_global, parse_json_lines, MonitorError};
use crate::rbac::{Actor, RbacError};
use crate::token::Claims;
use crate::validate::Field;
use crate::vault::{Audience, Environment, NewCredential, VaultError};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    field: Option<Field>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str) -> Self {
        Self {
            status,
            code: code.to_string(),
            field: None,
        }
    }

    fn coded(code: &str, field: Option<Field>) -> Self {
        Self {
            status: status_for(code),
            code: code.to_string(),
            field,
        }
    }

    fn bad_request(field: Field) -> Self {
        Self::coded("VALIDATION_ERROR", Some(field))
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "VALIDATION_ERROR"
        | "CAPTCHA_ERROR"
        | "CLAIM_MAPPING_ERROR"
        | "PARSE_ERROR"
        | "DUPLICATE_IN_CATALOG"
        | "MALFORMED"
        | "WINDOW_MISMATCH" => StatusCode::BAD_REQUEST,
        "INVALID_CREDENTIALS"
        | "TOKEN_VALIDATION_ERROR"
        | "TOKEN_REVOKED"
        | "SIGNATURE_INVALID"
        | "ASSERTION_EXPIRED"
        | "MFA_VALIDATION_ERROR"
        | "UNAUTHENTICATED" => StatusCode::UNAUTHORIZED,
        "NOT_AUTHORIZED"
        | "AUTHORIZATION_ERROR"
        | "EMAIL_NOT_VERIFIED"
        | "MFA_REQUIRED"
        | "ENVIRONMENT_MISMATCH"
        | "OPERATION_DISABLED" => StatusCode::FORBIDDEN,
        "UNKNOWN_USER" | "UNKNOWN_IDP" | "UNKNOWN_CREDENTIAL" | "UNKNOWN_SESSION" | "NOT_FOUND" => {
            StatusCode::NOT_FOUND
        }
        "USER_EXISTS"
        | "MEMBERS_PRESENT"
        | "PERMISSIONS_PRESENT"
        | "CONSTRAINT_VIOLATION"
        | "DUPLICATE_IDP"
        | "ALREADY_BOOTSTRAPPED"
        | "SESSION_CLOSED"
        | "NO_PENDING_CHALLENGE" => StatusCode::CONFLICT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code });
        if let Some(f) = self.field {
            body["field"] = json!(f.as_str());
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<IdentityError> for ApiError {
    fn from(e: IdentityError) -> Self {
        Self::coded(e.code(), e.field())
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let field = match &e {
            AuthError::Validation(f) => Some(*f),
            _ => None,
        };
        Self::coded(e.code(), field)
    }
}

impl From<MfaError> for ApiError {
    fn from(e: MfaError) -> Self {
        let field = match &e {
            MfaError::Validation(f) => Some(*f),
            _ => None,
        };
        Self::coded(e.code(), field)
    }
}

impl From<RbacError> for ApiError {
    fn from(e: RbacError) -> Self {
        Self::coded(e.code(), e.field())
    }
}

impl From<VaultError> for ApiError {
    fn from(e: VaultError) -> Self {
        let field = match &e {
            VaultError::Validation(f) => Some(*f),
            _ => None,
        };
        Self::coded(e.code(), field)
    }
}

impl From<MonitorError> for ApiError {
    fn from(e: MonitorError) -> Self {
        let code = match e {
            MonitorError::WindowMismatch => "WINDOW_MISMATCH",
            _ => "MALFORMED",
        };
        Self::coded(code, None)
    }
}

type ApiResult = Result<Response, ApiError>;
type Shared = State<Arc<App>>;

/// Runs blocking service code (bcrypt, store persistence) off the reactor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL"))?
}

fn ok(status: StatusCode, body: Value) -> ApiResult {
    Ok((status, Json(body)).into_response())
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

fn authenticate(app: &App, headers: &HeaderMap) -> Result<Claims, ApiError> {
    let token = bearer(headers)
        .as_deref()
        .and_then(|h| h.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHENTICATED"))?;
    Ok(app.auth.authenticate(&token)?)
}

fn actor(app: &App, headers: &HeaderMap) -> Result<Actor, ApiError> {
    let claims = authenticate(app, headers)?;
    Ok(app.rbac.actor(&claims.user_id)?)
}

fn json_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|_| ApiError::coded("PARSE_ERROR", None))
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/register", post(register))
        .route("/verify-email", get(verify_email).post(verify_email_post))
        .route("/verify-email/request", post(request_verification))
        .route("/forgot-password", post(forgot_password))
        .route("/reset-password", post(reset_password))
        .route("/login", post(login))
        .route("/login/mfa", post(login_mfa))
        .route("/token/refresh", post(refresh))
        .route("/federation/assertion", post(federated_login))
        .route("/federation/idps", post(register_idp))
        .route("/me", get(me).patch(update_me))
        .route("/me/addresses", post(upsert_address))
        .route("/me/addresses/{id}", delete(delete_address))
        .route("/mfa", get(mfa_status))
        .route("/mfa/toggle", post(mfa_toggle))
        .route("/mfa/confirm", post(mfa_confirm))
        .route("/permissions/catalog", post(load_catalog))
        .route("/groups", get(list_groups).post(create_group))
        .route(
            "/groups/{id}",
            get(view_group).put(rename_group).delete(delete_group),
        )
        .route("/groups/{id}/members", post(add_member))
        .route("/groups/{id}/members/{user_id}", delete(remove_member))
        .route("/groups/{id}/permissions", post(add_group_permission))
        .route(
            "/groups/{id}/permissions/{permission_id}",
            put(update_group_permission_tags),
        )
        .route("/vault/credentials", get(vault_list).post(vault_store))
        .route("/vault/credentials/{id}/secret", get(vault_retrieve))
        .route("/vault/credentials/{id}/rotate", post(vault_rotate))
        .route("/psm/sessions", post(psm_start))
        .route("/psm/sessions/{id}/events", post(psm_record))
        .route("/psm/sessions/{id}/end", post(psm_end))
        .route("/telemetry", post(telemetry))
        .route("/kpi", get(kpi))
        .fallback(gateway)
        .with_state(app)
}

async fn register(State(app): Shared, body: Bytes) -> ApiResult {
    let input: RegistrationInput = json_body(&body)?;
    let r = blocking(move || Ok(app.identity.register_user(input, app.captcha_enabled())?)).await?;
    ok(StatusCode::CREATED, json!(r))
}

#[derive(Deserialize)]
struct TokenQuery {
    token: String,
}

async fn verify_email(State(app): Shared, Query(q): Query<TokenQuery>) -> ApiResult {
    blocking(move || Ok(app.identity.verify_email(&q.token)?)).await?;
    ok(StatusCode::OK, json!({ "email_verified": true }))
}

async fn verify_email_post(State(app): Shared, body: Bytes) -> ApiResult {
    let q: TokenQuery = json_body(&body)?;
    blocking(move || Ok(app.identity.verify_email(&q.token)?)).await?;
    ok(StatusCode::OK, json!({ "email_verified": true }))
}

#[derive(Deserialize)]
struct EmailBody {
    email: String,
}

async fn request_verification(State(app): Shared, body: Bytes) -> ApiResult {
    let b: EmailBody = json_body(&body)?;
    blocking(move || Ok(app.identity.request_email_verification(&b.email)?)).await?;
    ok(StatusCode::ACCEPTED, json!({ "status": "sent" }))
}

#[derive(Deserialize)]
struct ForgotBody {
    email: String,
    dob: String,
}

async fn forgot_password(State(app): Shared, body: Bytes) -> ApiResult {
    let b: ForgotBody = json_body(&body)?;
    blocking(move || Ok(app.identity.request_password_reset(&b.email, &b.dob)?)).await?;
    ok(
        StatusCode::ACCEPTED,
        json!({ "status": "if the account exists, a reset link was sent" }),
    )
}

#[derive(Deserialize)]
struct ResetBody {
    token: String,
    new_password: String,
}

async fn reset_password(State(app): Shared, body: Bytes) -> ApiResult {
    let b: ResetBody = json_body(&body)?;
    blocking(move || Ok(app.identity.reset_password(&b.token, &b.new_password)?)).await?;
    ok(StatusCode::OK, json!({ "status": "password updated" }))
}

async fn login(State(app): Shared, body: Bytes) -> ApiResult {
    let creds: Credentials = json_body(&body)?;
    let out = blocking(move || Ok(app.auth.login(creds, app.captcha_enabled())?)).await?;
    ok(StatusCode::OK, json!(out))
}

#[derive(Deserialize)]
struct MfaLoginBody {
    mfa_token: String,
    code: String,
}

async fn login_mfa(State(app): Shared, body: Bytes) -> ApiResult {
    let b: MfaLoginBody = json_body(&body)?;
    let pair = blocking(move || Ok(app.auth.complete_mfa(&b.mfa_token, &b.code)?)).await?;
    ok(StatusCode::OK, json!(pair))
}

#[derive(Deserialize)]
struct RefreshBody {
    refresh_token: String,
}

async fn refresh(State(app): Shared, body: Bytes) -> ApiResult {
    let b: RefreshBody = json_body(&body)?;
    let pair = blocking(move || Ok(app.auth.refresh(&b.refresh_token)?)).await?;
    ok(StatusCode::OK, json!(pair))
}

#[derive(Deserialize)]
struct AssertionBody {
    idp_id: String,
    assertion: String,
}

async fn federated_login(State(app): Shared, body: Bytes) -> ApiResult {
    let b: AssertionBody = json_body(&body)?;
    let user_id = blocking(move || {
        Ok(app
            .identity
            .verify_federated_assertion(&b.assertion, &b.idp_id)?)
    })
    .await?;
    ok(StatusCode::OK, json!({ "user_id": user_id }))
}

async fn register_idp(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let cfg: IdpConfig = json_body(&body)?;
    blocking(move || {
        let a = actor(&app, &headers)?;
        if a.role != Role::Admin || a.master_id != cfg.master_id {
            return Err(ApiError::coded("AUTHORIZATION_ERROR", None));
        }
        Ok(app.identity.register_idp(cfg)?)
    })
    .await?;
    ok(StatusCode::CREATED, json!({ "status": "registered" }))
}

async fn me(State(app): Shared, headers: HeaderMap) -> ApiResult {
    let p = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.identity.profile(&c.user_id, &c.user_id)?)
    })
    .await?;
    ok(StatusCode::OK, json!(p))
}

async fn update_me(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let update: ProfileUpdate = json_body(&body)?;
    blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app
            .identity
            .update_profile(&c.user_id, &c.user_id, update)?)
    })
    .await?;
    ok(StatusCode::OK, json!({ "status": "updated" }))
}

async fn upsert_address(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let input: AddressInput = json_body(&body)?;
    let id = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.identity.upsert_address(&c.user_id, &c.user_id, input)?)
    })
    .await?;
    ok(StatusCode::OK, json!({ "id": id }))
}

async fn delete_address(
    State(app): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult {
    blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.identity.delete_address(&c.user_id, &c.user_id, &id)?)
    })
    .await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn mfa_status(State(app): Shared, headers: HeaderMap) -> ApiResult {
    let s = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.mfa.status(&c.user_id))
    })
    .await?;
    ok(StatusCode::OK, json!(s))
}

#[derive(Deserialize)]
struct ToggleBody {
    #[serde(rename = "type")]
    mfa_type: String,
}

async fn mfa_toggle(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: ToggleBody = json_body(&body)?;
    let ch = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.mfa.request_toggle(&c.user_id, &b.mfa_type)?)
    })
    .await?;
    ok(StatusCode::OK, json!(ch))
}

#[derive(Deserialize)]
struct ConfirmBody {
    code: String,
    enable: bool,
}

async fn mfa_confirm(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: ConfirmBody = json_body(&body)?;
    let out = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.mfa.confirm_toggle(&c.user_id, &b.code, b.enable)?)
    })
    .await?;
    ok(StatusCode::OK, json!(out))
}

async fn load_catalog(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let text =
        String::from_utf8(body.to_vec()).map_err(|_| ApiError::coded("PARSE_ERROR", None))?;
    let n = blocking(move || {
        let a = actor(&app, &headers)?;
        if a.role != Role::Admin {
            return Err(ApiError::coded("AUTHORIZATION_ERROR", None));
        }
        Ok(app.rbac.load_permission_catalog(&text)?)
    })
    .await?;
    ok(StatusCode::OK, json!({ "loaded": n }))
}

#[derive(Deserialize)]
struct GroupBody {
    name: String,
}

async fn list_groups(State(app): Shared, headers: HeaderMap) -> ApiResult {
    let groups = blocking(move || {
        let a = actor(&app, &headers)?;
        Ok(app.rbac.list_groups(&a))
    })
    .await?;
    ok(StatusCode::OK, json!(groups))
}

async fn create_group(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: GroupBody = json_body(&body)?;
    let g = blocking(move || {
        let a = actor(&app, &headers)?;
        Ok(app.rbac.upsert_group(&b.name, &a.master_id, &a, None)?)
    })
    .await?;
    ok(StatusCode::CREATED, json!(g))
}

async fn view_group(State(app): Shared, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let v = blocking(move || {
        let a = actor(&app, &headers)?;
        Ok(app.rbac.view_group(&id, &a)?)
    })
    .await?;
    ok(StatusCode::OK, json!(v))
}

async fn rename_group(
    State(app): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult {
    let b: GroupBody = json_body(&body)?;
    let g = blocking(move || {
        let a = actor(&app, &headers)?;
        Ok(app
            .rbac
            .upsert_group(&b.name, &a.master_id, &a, Some(&id))?)
    })
    .await?;
    ok(StatusCode::OK, json!(g))
}

async fn delete_group(State(app): Shared, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    blocking(move || {
        let a = actor(&app, &headers)?;
        Ok(app.rbac.delete_group(&id, &a.master_id, &a)?)
    })
    .await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Deserialize)]
struct MemberBody {
    user_id: String,
}

async fn add_member(
    State(app): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult {
    let b: MemberBody = json_body(&body)?;
    blocking(move || {
        let a = actor(&app, &headers)?;
        Ok(app
            .rbac
            .modify_group_member(&b.user_id, &id, &a.master_id, &a, true)?)
    })
    .await?;
    ok(StatusCode::CREATED, json!({ "status": "added" }))
}

async fn remove_member(
    State(app): Shared,
    headers: HeaderMap,
    Path((id, user_id)): Path<(String, String)>,
) -> ApiResult {
    blocking(move || {
        let a = actor(&app, &headers)?;
        Ok(app
            .rbac
            .modify_group_member(&user_id, &id, &a.master_id, &a, false)?)
    })
    .await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Deserialize)]
struct GrantBody {
    permission_id: String,
    #[serde(default)]
    tags: Vec<String>,
}

async fn add_group_permission(
    State(app): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult {
    let b: GrantBody = json_body(&body)?;
    let gp = blocking(move || {
        let a = actor(&app, &headers)?;
        Ok(app
            .rbac
            .add_group_permission(&id, &b.permission_id, &a, &b.tags)?)
    })
    .await?;
    ok(StatusCode::CREATED, json!(gp))
}

#[derive(Deserialize)]
struct TagsBody {
    tags: Vec<String>,
}

async fn update_group_permission_tags(
    State(app): Shared,
    headers: HeaderMap,
    Path((id, permission_id)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult {
    let b: TagsBody = json_body(&body)?;
    blocking(move || {
        let a = actor(&app, &headers)?;
        Ok(app
            .rbac
            .update_group_permission_tags(&id, &permission_id, &a, &b.tags)?)
    })
    .await?;
    ok(StatusCode::OK, json!({ "status": "updated" }))
}

#[derive(Deserialize)]
struct StoreBody {
    #[serde(flatten)]
    spec: NewCredential,
    secret: String,
}

async fn vault_store(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: StoreBody = json_body(&body)?;
    let id = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.vault.store_credential(b.spec, &b.secret, &c.user_id)?)
    })
    .await?;
    ok(StatusCode::CREATED, json!({ "id": id }))
}

#[derive(Deserialize)]
struct ListQuery {
    audience: Option<String>,
    env: Option<String>,
}

async fn vault_list(
    State(app): Shared,
    headers: HeaderMap,
    Query(q): Query<ListQuery>,
) -> ApiResult {
    let audience = q
        .audience
        .map(|a| a.parse::<Audience>())
        .transpose()
        .map_err(|_| ApiError::bad_request(Field::Identifier))?;
    let env = q
        .env
        .map(|e| e.parse::<Environment>())
        .transpose()
        .map_err(|_| ApiError::bad_request(Field::Identifier))?;
    let list = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.vault.list(&c.user_id, audience, env)?)
    })
    .await?;
    ok(StatusCode::OK, json!(list))
}

async fn vault_retrieve(
    State(app): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult {
    let secret = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app
            .vault
            .retrieve_credential(&id, &c.user_id, c.mfa_verified_at())?)
    })
    .await?;
    ok(StatusCode::OK, json!({ "secret": secret.as_str() }))
}

async fn vault_rotate(State(app): Shared, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let version = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.vault.rotate_as(&id, &c.user_id)?)
    })
    .await?;
    ok(StatusCode::OK, json!({ "version": version }))
}

#[derive(Deserialize)]
struct PsmStartBody {
    target: String,
}

async fn psm_start(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: PsmStartBody = json_body(&body)?;
    let id = blocking(move || {
        let c = authenticate(&app, &headers)?;
        Ok(app.vault.psm_start(&c.user_id, &b.target)?)
    })
    .await?;
    ok(StatusCode::CREATED, json!({ "session_id": id }))
}

#[derive(Deserialize)]
struct PsmEventBody {
    kind: String,
    #[serde(default)]
    detail: Value,
}

/// Only the session's owner may append to or close it.
fn own_session(app: &App, headers: &HeaderMap, session_id: &str) -> Result<(), ApiError> {
    let c = authenticate(app, headers)?;
    match app.vault.session_owner(session_id) {
        Some(owner) if owner == c.user_id => Ok(()),
        Some(_) => Err(ApiError::coded("AUTHORIZATION_ERROR", None)),
        None => Err(ApiError::coded("UNKNOWN_SESSION", None)),
    }
}

async fn psm_record(
    State(app): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult {
    let b: PsmEventBody = json_body(&body)?;
    blocking(move || {
        own_session(&app, &headers, &id)?;
        Ok(app.vault.psm_record(&id, &b.kind, b.detail)?)
    })
    .await?;
    ok(StatusCode::ACCEPTED, json!({ "status": "recorded" }))
}

async fn psm_end(State(app): Shared, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let s = blocking(move || {
        own_session(&app, &headers, &id)?;
        Ok(app.vault.psm_end(&id)?)
    })
    .await?;
    ok(StatusCode::OK, json!(s))
}

async fn telemetry(State(app): Shared, body: Bytes) -> ApiResult {
    let text = String::from_utf8(body.to_vec()).map_err(|_| ApiError::coded("MALFORMED", None))?;
    let events = parse_json_lines(&text)?;
    let (mut accepted, mut rejected) = (0u64, 0u64);
    for e in events {
        match app.monitor.ingest(e) {
            Ok(()) => accepted += 1,
            Err(_) => rejected += 1,
        }
    }
    ok(
        StatusCode::ACCEPTED,
        json!({ "accepted": accepted, "rejected": rejected }),
    )
}

#[derive(Deserialize)]
struct KpiQuery {
    site: Option<String>,
    window: Option<DateTime<Utc>>,
}

async fn kpi(State(app): Shared, Query(q): Query<KpiQuery>) -> ApiResult {
    match (q.site, q.window) {
        (Some(site), window) => {
            let snaps: Vec<_> = app
                .monitor
                .snapshots(&site)
                .into_iter()
                .filter(|s| window.is_none_or(|w| s.window_start == w))
                .collect();
            ok(StatusCode::OK, json!(snaps))
        }
        (None, Some(window)) => {
            let g = aggregate_global(&app.monitor.snapshots_at(window))?;
            ok(StatusCode::OK, json!(g))
        }
        (None, None) => ok(StatusCode::OK, json!({ "sites": app.monitor.sites() })),
    }
}

async fn gateway(
    State(app): Shared,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let parsed = if body.is_empty() {
        Ok(Value::Null)
    } else {
        serde_json::from_slice(&body)
    };
    let Ok(body) = parsed else {
        return ApiError::coded("PARSE_ERROR", None).into_response();
    };
    let req = GatewayRequest {
        method: method.as_str().to_string(),
        path: uri.path().to_string(),
        authorization: bearer(&headers),
        body,
    };
    let resp = match tokio::task::spawn_blocking(move || app.gateway.handle(&req)).await {
        Ok(r) => r,
        Err(_) => {
            return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL").into_response()
        }
    };
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(resp.body)).into_response()
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    app: Arc<App>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}
