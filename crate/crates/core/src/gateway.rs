//! Central entry point: bearer authentication, routing, policy enforcement
//! and traffic logging.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audit::AuditLog;
use crate::authn::AuthService;
use crate::clock::SharedClock;
use crate::model::{new_id, normalize_tags, Id, Resource};
use crate::monitor::{EventKind, Monitor, TelemetryEvent};
use crate::policy::{filter_resources, AccessRequest, Decision, PolicyEngine, ReasonCode};
use crate::store::Store;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteBinding {
    pub path_prefix: String,
    pub service: String,
    pub resource_kind: String,
    /// HTTP method (upper case) to policy action.
    pub action_map: BTreeMap<String, String>,
    pub app: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("route prefix already registered: {0}")]
    DuplicatePrefix(String),
    #[error("unknown service: {0}")]
    UnknownService(String),
    #[error("invalid route: {0}")]
    InvalidRoute(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayRequest {
    pub method: String,
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

impl GatewayRequest {
    pub fn new(method: &str, path: &str) -> Self {
        Self {
            method: method.to_ascii_uppercase(),
            path: path.to_string(),
            authorization: None,
            body: Value::Null,
        }
    }

    pub fn bearer(mut self, token: &str) -> Self {
        self.authorization = Some(format!("Bearer {token}"));
        self
    }

    pub fn body(mut self, body: Value) -> Self {
        self.body = body;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayResponse {
    pub status: u16,
    pub body: Value,
}

impl GatewayResponse {
    fn error(status: u16, code: &str) -> Self {
        Self {
            status,
            body: json!({ "error": code }),
        }
    }
}

/// What the backend sees after the PEP has permitted the call.
#[derive(Debug, Clone)]
pub struct BackendRequest {
    pub method: String,
    pub action: String,
    pub resource_kind: String,
    /// Path below the route prefix, without leading slash.
    pub rest: String,
    pub subject: Id,
    /// Master that new resources belong to.
    pub master_id: Id,
    pub body: Value,
    pub decision: Decision,
}

/// Backend reply. Only `Resources` bodies are tag-filtered.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendBody {
    Resources(Vec<Resource>),
    Opaque(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub status: u16,
    pub body: BackendBody,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("not found")]
    NotFound,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("method not allowed")]
    MethodNotAllowed,
    #[error("backend failure: {0}")]
    Failed(String),
}

pub trait ResourceBackend: Send + Sync {
    fn handle(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

/// Generic resource service over the store's resource table.
pub struct ResourceStoreBackend {
    store: Arc<Store>,
}

impl ResourceStoreBackend {
    pub fn new(store: Arc<Store>) -> Self {
        Self { store }
    }
}

#[derive(Deserialize)]
struct NewResource {
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    payload: Value,
}

impl ResourceBackend for ResourceStoreBackend {
    fn handle(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        match (req.method.as_str(), req.rest.is_empty()) {
            ("GET", true) => {
                let list = self.store.read(|t| {
                    req.decision
                        .masters
                        .iter()
                        .flat_map(|m| t.resources_of_master(m))
                        .filter(|r| r.kind == req.resource_kind)
                        .cloned()
                        .collect()
                });
                Ok(BackendResponse {
                    status: 200,
                    body: BackendBody::Resources(list),
                })
            }
            ("GET", false) => {
                let r = self
                    .store
                    .read(|t| t.resource(&req.rest).cloned())
                    .filter(|r| {
                        r.kind == req.resource_kind && req.decision.masters.contains(&r.master_id)
                    })
                    .ok_or(BackendError::NotFound)?;
                Ok(BackendResponse {
                    status: 200,
                    body: BackendBody::Resources(vec![r]),
                })
            }
            ("POST", true) => {
                let input: NewResource = serde_json::from_value(req.body.clone())
                    .map_err(|e| BackendError::BadRequest(e.to_string()))?;
                let resource = Resource {
                    id: new_id(),
                    master_id: req.master_id.clone(),
                    kind: req.resource_kind.clone(),
                    tags: normalize_tags(&input.tags),
                    payload: input.payload,
                };
                self.store
                    .write(|t| t.insert_resource(resource.clone()))
                    .map_err(|e| BackendError::Failed(e.to_string()))?;
                Ok(BackendResponse {
                    status: 201,
                    body: BackendBody::Opaque(serde_json::to_value(&resource).unwrap_or_default()),
                })
            }
            _ => Err(BackendError::MethodNotAllowed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub effect: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason_code: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtered: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLogEntry {
    pub time: DateTime<Utc>,
    pub method: String,
    pub path: String,
    pub subject: String,
    pub status: u16,
    pub latency_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionSummary>,
}

pub const ANONYMOUS: &str = "anonymous";

pub struct Gateway {
    routes: RwLock<Arc<Vec<RouteBinding>>>,
    services: RwLock<HashMap<String, Arc<dyn ResourceBackend>>>,
    auth: Arc<AuthService>,
    policy: Arc<PolicyEngine>,
    store: Arc<Store>,
    monitor: Option<Arc<Monitor>>,
    site: String,
    clock: SharedClock,
    traffic: AuditLog,
    telemetry: Mutex<()>,
}

struct Outcome {
    response: GatewayResponse,
    subject: Option<Id>,
    decision: Option<DecisionSummary>,
}

impl Outcome {
    fn anon(response: GatewayResponse) -> Self {
        Self {
            response,
            subject: None,
            decision: None,
        }
    }
}

impl Gateway {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        auth: Arc<AuthService>,
        policy: Arc<PolicyEngine>,
        store: Arc<Store>,
        monitor: Option<Arc<Monitor>>,
        site: impl Into<String>,
        clock: SharedClock,
        traffic: AuditLog,
    ) -> Self {
        Self {
            routes: RwLock::new(Arc::new(Vec::new())),
            services: RwLock::new(HashMap::new()),
            auth,
            policy,
            store,
            monitor,
            site: site.into(),
            clock,
            traffic,
            telemetry: Mutex::new(()),
        }
    }

    pub fn register_service(&self, id: impl Into<String>, backend: Arc<dyn ResourceBackend>) {
        self.services.write().insert(id.into(), backend);
    }

    pub fn register_route(&self, binding: RouteBinding) -> Result<(), GatewayError> {
        let prefix = normalize_prefix(&binding.path_prefix)
            .ok_or_else(|| GatewayError::InvalidRoute(binding.path_prefix.clone()))?;
        if binding.action_map.is_empty() || binding.resource_kind.is_empty() {
            return Err(GatewayError::InvalidRoute(prefix));
        }
        if !self.services.read().contains_key(&binding.service) {
            return Err(GatewayError::UnknownService(binding.service));
        }
        let binding = RouteBinding {
            path_prefix: prefix,
            action_map: binding
                .action_map
                .into_iter()
                .map(|(m, a)| (m.to_ascii_uppercase(), a))
                .collect(),
            ..binding
        };
        let mut routes = self.routes.write();
        if routes.iter().any(|r| r.path_prefix == binding.path_prefix) {
            return Err(GatewayError::DuplicatePrefix(binding.path_prefix));
        }
        let mut next = (**routes).clone();
        next.push(binding);
        // Longest prefix wins.
        next.sort_by_key(|b| std::cmp::Reverse(b.path_prefix.len()));
        *routes = Arc::new(next);
        Ok(())
    }

    pub fn routes(&self) -> Arc<Vec<RouteBinding>> {
        self.routes.read().clone()
    }

    pub fn handle(&self, req: &GatewayRequest) -> GatewayResponse {
        let started = Instant::now();
        let out = self.pipeline(req);
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        let entry = TrafficLogEntry {
            time: self.clock.now(),
            method: req.method.clone(),
            path: req.path.clone(),
            subject: out.subject.clone().unwrap_or_else(|| ANONYMOUS.to_string()),
            status: out.response.status,
            latency_ms,
            decision: out.decision.clone(),
        };
        self.traffic.record(&entry);
        self.observe(&out, latency_ms);
        out.response
    }

    fn observe(&self, out: &Outcome, latency_ms: f64) {
        let Some(monitor) = &self.monitor else {
            return;
        };
        let kind = match &out.decision {
            Some(d) if d.effect == "permit" => EventKind::AccessPermitted,
            Some(_) => EventKind::AccessDenied,
            None => EventKind::LatencySample,
        };
        let _serial = self.telemetry.lock();
        let mut ev =
            TelemetryEvent::new(self.clock.now(), &self.site, kind).attr("latency_ms", latency_ms);
        if let Some(s) = &out.subject {
            ev = ev.subject(s);
        }
        if let Err(e) = monitor.ingest(ev) {
            tracing::debug!(error = %e, "gateway telemetry dropped");
        }
    }

    fn pipeline(&self, req: &GatewayRequest) -> Outcome {
        let routes = self.routes();
        let Some((route, rest)) = routes
            .iter()
            .find_map(|r| match_route(r, &req.path).map(|rest| (r, rest)))
        else {
            return Outcome::anon(GatewayResponse::error(404, "NOT_FOUND"));
        };
        let token = req
            .authorization
            .as_deref()
            .and_then(|h| h.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty());
        let Some(token) = token else {
            return Outcome::anon(GatewayResponse::error(401, "UNAUTHENTICATED"));
        };
        let claims = match self.auth.authenticate(token) {
            Ok(c) => c,
            Err(_) => return Outcome::anon(GatewayResponse::error(401, "UNAUTHENTICATED")),
        };
        let subject = claims.user_id.clone();
        let Some(action) = route.action_map.get(&req.method) else {
            return Outcome {
                response: GatewayResponse::error(405, "METHOD_NOT_ALLOWED"),
                subject: Some(subject),
                decision: None,
            };
        };
        let decision = self.policy.decide(&AccessRequest::new(
            subject.clone(),
            route.resource_kind.clone(),
            action.clone(),
            route.app.clone(),
        ));
        if let Some(code) = decision.reason_code {
            return Outcome {
                response: GatewayResponse {
                    status: 403,
                    body: json!({ "reason": code.as_str() }),
                },
                subject: Some(subject),
                decision: Some(DecisionSummary {
                    effect: "deny".into(),
                    reason_code: Some(code.as_str().into()),
                    filtered: None,
                }),
            };
        }
        // Writes land in the subject's own master when a grant comes from
        // it, otherwise in the master that granted access.
        let own = self
            .store
            .read(|t| t.user(&subject).map(|u| u.master_id.clone()))
            .unwrap_or_default();
        let master_id = if decision.masters.contains(&own) {
            own
        } else {
            decision.masters.iter().next().cloned().unwrap_or(own)
        };
        let service = self.services.read().get(&route.service).cloned();
        let backend_req = BackendRequest {
            method: req.method.clone(),
            action: action.clone(),
            resource_kind: route.resource_kind.clone(),
            rest: rest.to_string(),
            subject: subject.clone(),
            master_id,
            body: req.body.clone(),
            decision: decision.clone(),
        };
        let mut summary = DecisionSummary {
            effect: "permit".into(),
            reason_code: None,
            filtered: None,
        };
        let result = match service {
            Some(s) => s.handle(&backend_req),
            None => Err(BackendError::Failed(format!(
                "service {} not registered",
                route.service
            ))),
        };
        let response = match result {
            Ok(BackendResponse {
                status,
                body: BackendBody::Resources(list),
            }) => {
                let single = !backend_req.rest.is_empty();
                let before = list.len();
                let kept = filter_resources(list, &decision);
                summary.filtered = Some(before - kept.len());
                if single && kept.is_empty() {
                    summary.reason_code = Some(ReasonCode::TagMismatch.as_str().into());
                    GatewayResponse {
                        status: 403,
                        body: json!({ "reason": ReasonCode::TagMismatch.as_str() }),
                    }
                } else if single {
                    GatewayResponse {
                        status,
                        body: serde_json::to_value(&kept[0]).unwrap_or_default(),
                    }
                } else {
                    GatewayResponse {
                        status,
                        body: serde_json::to_value(&kept).unwrap_or_default(),
                    }
                }
            }
            Ok(BackendResponse {
                status,
                body: BackendBody::Opaque(v),
            }) => GatewayResponse { status, body: v },
            Err(BackendError::NotFound) => GatewayResponse::error(404, "NOT_FOUND"),
            Err(BackendError::MethodNotAllowed) => {
                GatewayResponse::error(405, "METHOD_NOT_ALLOWED")
            }
            Err(BackendError::BadRequest(m)) => GatewayResponse {
                status: 400,
                body: json!({ "error": "BAD_REQUEST", "message": m }),
            },
            Err(BackendError::Failed(m)) => {
                tracing::warn!(route = %route.path_prefix, error = %m, "backend failure");
                GatewayResponse::error(502, "BAD_GATEWAY")
            }
        };
        Outcome {
            response,
            subject: Some(subject),
            decision: Some(summary),
        }
    }
}

fn normalize_prefix(p: &str) -> Option<String> {
    let p = p.trim().trim_end_matches('/');
    if !p.starts_with('/') || p.len() < 2 || p.contains("//") {
        return None;
    }
    Some(p.to_string())
}

/// Returns the path remainder if `path` is under the route prefix on a
/// segment boundary.
fn match_route<'a>(route: &RouteBinding, path: &'a str) -> Option<&'a str> {
    let path = path.split(['?', '#']).next().unwrap_or_default();
    let rest = path.strip_prefix(route.path_prefix.as_str())?;
    if rest.is_empty() {
        Some("")
    } else {
        rest.strip_prefix('/').map(|r| r.trim_end_matches('/'))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn route(prefix: &str) -> RouteBinding {
        RouteBinding {
            path_prefix: prefix.into(),
            service: "resources".into(),
            resource_kind: "client".into(),
            action_map: [("GET".to_string(), "list".to_string())].into(),
            app: "banking".into(),
        }
    }

    #[test]
    fn prefix_matching_respects_segments() {
        let r = route("/api/clients");
        assert_eq!(match_route(&r, "/api/clients"), Some(""));
        assert_eq!(match_route(&r, "/api/clients/"), Some(""));
        assert_eq!(match_route(&r, "/api/clients/abc"), Some("abc"));
        assert_eq!(match_route(&r, "/api/clients?x=1"), Some(""));
        assert_eq!(match_route(&r, "/api/clientsx"), None);
        assert_eq!(match_route(&r, "/api"), None);
    }

    #[test]
    fn prefixes_are_normalized() {
        assert_eq!(
            normalize_prefix("/api/clients/").as_deref(),
            Some("/api/clients")
        );
        assert_eq!(normalize_prefix("api"), None);
        assert_eq!(normalize_prefix("/"), None);
    }
}
