mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chez_core::app::App;
use chez_core::gateway::{
    BackendBody, BackendError, BackendRequest, BackendResponse, GatewayError, GatewayRequest,
    ResourceBackend,
};
use chez_core::model::Resource;
use common::{world, World};
use proptest::prelude::*;
use serde_json::{json, Value};

fn clients_route(w: &World) {
    w.t.gateway
        .register_route(App::resource_route(
            "/api/clients",
            "client",
            "banking",
            &[("GET", "read"), ("POST", "create"), ("DELETE", "delete")],
        ))
        .unwrap();
}

fn resource(w: &World, tags: &[&str]) -> String {
    let r = Resource {
        id: chez_core::model::new_id(),
        master_id: w.root.master_id.clone(),
        kind: "client".into(),
        tags: tags.iter().map(|s| s.to_string()).collect(),
        payload: json!({ "tags": tags }),
    };
    let id = r.id.clone();
    w.t.store.write(|s| s.insert_resource(r)).unwrap();
    id
}

fn decisions(w: &World) -> usize {
    w.t.audit
        .records()
        .iter()
        .filter(|r| r.get("effect").is_some())
        .count()
}

#[test]
fn granted_create_reaches_backend() {
    let w = world();
    clients_route(&w);
    let u = w.user("u@example.com");
    w.group("tellers", &[&u], &[("client", "create", &[])]);
    let token = w.login("u@example.com").access_token;
    let resp = w.t.gateway.handle(
        &GatewayRequest::new("POST", "/api/clients")
            .bearer(&token)
            .body(json!({ "tags": ["Branch1"], "payload": { "name": "ACME" } })),
    );
    assert_eq!(resp.status, 201, "{:?}", resp.body);
    assert_eq!(resp.body["tags"], json!(["branch1"]));
    assert_eq!(resp.body["master_id"], json!(w.root.master_id));
}

#[test]
fn missing_or_bad_token_is_401_without_a_decision() {
    let w = world();
    clients_route(&w);
    let before = decisions(&w);
    for req in [
        GatewayRequest::new("GET", "/api/clients"),
        GatewayRequest::new("GET", "/api/clients").bearer("garbage"),
        GatewayRequest {
            authorization: Some("Basic dTpw".into()),
            ..GatewayRequest::new("GET", "/api/clients")
        },
    ] {
        let resp = w.t.gateway.handle(&req);
        assert_eq!(resp.status, 401);
    }
    // A refresh token is not an access token.
    w.user("u@example.com");
    let refresh = w.login("u@example.com").refresh_token;
    let resp =
        w.t.gateway
            .handle(&GatewayRequest::new("GET", "/api/clients").bearer(&refresh));
    assert_eq!(resp.status, 401);
    assert_eq!(decisions(&w), before);
}

#[test]
fn deny_is_403_with_reason() {
    let w = world();
    clients_route(&w);
    let u = w.user("u@example.com");
    let token = w.login("u@example.com").access_token;
    let resp =
        w.t.gateway
            .handle(&GatewayRequest::new("GET", "/api/clients").bearer(&token));
    assert_eq!(resp.status, 403);
    assert_eq!(resp.body, json!({ "reason": "NO_GRANT" }));

    // Admin-only permission held by a plain user.
    w.group("g", &[&u], &[("client", "delete", &[])]);
    let resp =
        w.t.gateway
            .handle(&GatewayRequest::new("DELETE", "/api/clients").bearer(&token));
    assert_eq!(resp.body, json!({ "reason": "ROLE_MISMATCH" }));
}

#[test]
fn list_responses_are_tag_filtered() {
    let w = world();
    clients_route(&w);
    let u = w.user("u@example.com");
    w.group(
        "m12",
        &[&u],
        &[("client", "read", &["Marketing1", "Marketing2"])],
    );
    w.group("m3", &[&u], &[("client", "read", &["Marketing3"])]);
    let m1 = resource(&w, &["marketing1"]);
    let m3 = resource(&w, &["marketing3", "sales"]);
    let sales = resource(&w, &["sales"]);
    let untagged = resource(&w, &[]);
    let token = w.login("u@example.com").access_token;

    let resp =
        w.t.gateway
            .handle(&GatewayRequest::new("GET", "/api/clients").bearer(&token));
    assert_eq!(resp.status, 200);
    let mut ids: Vec<String> = resp
        .body
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["id"].as_str().unwrap().to_string())
        .collect();
    ids.sort();
    let mut expected = vec![m1.clone(), m3, untagged];
    expected.sort();
    assert_eq!(ids, expected);

    let one =
        w.t.gateway
            .handle(&GatewayRequest::new("GET", &format!("/api/clients/{m1}")).bearer(&token));
    assert_eq!(one.status, 200);
    assert_eq!(one.body["id"], json!(m1));
    let hidden =
        w.t.gateway
            .handle(&GatewayRequest::new("GET", &format!("/api/clients/{sales}")).bearer(&token));
    assert_eq!(hidden.status, 403);
    assert_eq!(hidden.body, json!({ "reason": "TAG_MISMATCH" }));
}

#[test]
fn routing_errors() {
    let w = world();
    clients_route(&w);
    let dup = w.t.gateway.register_route(App::resource_route(
        "/api/clients/",
        "x",
        "a",
        &[("GET", "r")],
    ));
    assert!(matches!(dup, Err(GatewayError::DuplicatePrefix(_))));
    let unknown =
        w.t.gateway
            .register_route(chez_core::gateway::RouteBinding {
                service: "nope".into(),
                ..App::resource_route("/api/x", "x", "a", &[("GET", "r")])
            });
    assert!(matches!(unknown, Err(GatewayError::UnknownService(_))));

    w.user("u@example.com");
    let token = w.login("u@example.com").access_token;
    let resp =
        w.t.gateway
            .handle(&GatewayRequest::new("GET", "/api/unknown").bearer(&token));
    assert_eq!(resp.status, 404);
    let resp =
        w.t.gateway
            .handle(&GatewayRequest::new("PATCH", "/api/clients").bearer(&token));
    assert_eq!(resp.status, 405);
}

struct Failing;

impl ResourceBackend for Failing {
    fn handle(&self, _: &BackendRequest) -> Result<BackendResponse, BackendError> {
        Err(BackendError::Failed("down".into()))
    }
}

#[test]
fn backend_failure_is_502_and_logged() {
    let w = world();
    w.t.gateway.register_service("failing", Arc::new(Failing));
    w.t.gateway
        .register_route(chez_core::gateway::RouteBinding {
            service: "failing".into(),
            ..App::resource_route("/api/clients", "client", "banking", &[("GET", "read")])
        })
        .unwrap();
    let u = w.user("u@example.com");
    w.group("g", &[&u], &[("client", "read", &[])]);
    let token = w.login("u@example.com").access_token;
    let resp =
        w.t.gateway
            .handle(&GatewayRequest::new("GET", "/api/clients").bearer(&token));
    assert_eq!(resp.status, 502);
    let log = w.t.traffic.records();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0]["status"], 502);
    assert_eq!(log[0]["subject"], json!(u));
}

/// Counts every call that reaches it.
#[derive(Default)]
struct Canary {
    hits: AtomicUsize,
}

impl ResourceBackend for Canary {
    fn handle(&self, _: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.hits.fetch_add(1, Ordering::SeqCst);
        Ok(BackendResponse {
            status: 200,
            body: BackendBody::Opaque(Value::Null),
        })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The canary is reachable only with a permit, and every request leaves
    /// exactly one traffic log line.
    #[test]
    fn pep_completeness(
        reqs in proptest::collection::vec(
            (0usize..4, prop::sample::select(vec!["GET", "POST", "PUT", "DELETE"]), 0usize..4),
            1..12,
        )
    ) {
        let w = world();
        let canary = Arc::new(Canary::default());
        w.t.gateway.register_service("canary", canary.clone());
        w.t.gateway.register_route(chez_core::gateway::RouteBinding {
            service: "canary".into(),
            ..App::resource_route(
                "/api/clients",
                "client",
                "banking",
                &[("GET", "read"), ("POST", "create"), ("DELETE", "delete")],
            )
        }).unwrap();
        let reader = w.user("reader@example.com");
        w.user("nobody@example.com");
        w.group("g", &[&reader], &[("client", "read", &[])]);
        let tokens = [
            None,
            Some("not-a-token".to_string()),
            Some(w.login("reader@example.com").access_token),
            Some(w.login("nobody@example.com").access_token),
        ];
        let paths = ["/api/clients", "/api/clients/x", "/api/clientsx", "/other"];
        let mut permitted = 0;
        for (i, (p, method, t)) in reqs.iter().enumerate() {
            let mut req = GatewayRequest::new(method, paths[*p]);
            req.authorization = tokens[*t].as_ref().map(|t| format!("Bearer {t}"));
            let resp = w.t.gateway.handle(&req);
            let log = w.t.traffic.records();
            prop_assert_eq!(log.len(), i + 1);
            prop_assert_eq!(log[i]["status"].as_u64(), Some(resp.status as u64));
            let is_permit = log[i]["decision"]["effect"] == "permit";
            if is_permit {
                permitted += 1;
                prop_assert_eq!(*t, 2);
                prop_assert_eq!(*method, "GET");
            }
        }
        prop_assert_eq!(canary.hits.load(Ordering::SeqCst), permitted);
    }
}

#[test]
fn gateway_feeds_the_monitor() {
    let w = world();
    clients_route(&w);
    w.user("u@example.com");
    let token = w.login("u@example.com").access_token;
    for _ in 0..3 {
        w.t.gateway
            .handle(&GatewayRequest::new("GET", "/api/clients").bearer(&token));
    }
    w.t.monitor.flush();
    let snaps = w.t.monitor.snapshots("local");
    let denied: u64 = snaps
        .iter()
        .map(|s| s.counter(chez_core::monitor::EventKind::AccessDenied))
        .sum();
    assert_eq!(denied, 3);
}
