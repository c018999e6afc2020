mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chez_core::app::{App, TestApp};
use chez_core::config::Config;
use chez_core::mail::MemoryMailSink;
use common::{CATALOG, PASSWORD};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Server {
    router: Router,
    app: Arc<App>,
    mail: Arc<MemoryMailSink>,
}

fn server() -> Server {
    let TestApp { app, mail, .. } = App::in_memory(Config {
        routes: vec![App::resource_route(
            "/api/clients",
            "client",
            "banking",
            &[("GET", "read")],
        )],
        ..Config::default()
    });
    let app = Arc::new(app);
    Server {
        router: chez_core::http::router(app.clone()),
        app,
        mail,
    }
}

impl Server {
    async fn call(
        &self,
        method: &str,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let body = match body {
            Some(b) => {
                req = req.header("content-type", "application/json");
                Body::from(b.to_string())
            }
            None => Body::empty(),
        };
        let resp = self
            .router
            .clone()
            .oneshot(req.body(body).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value)
    }

    async fn register(&self, email: &str, phone: &str) -> String {
        let (s, body) = self
            .call(
                "POST",
                "/register",
                None,
                Some(json!({
                    "name": "Http User",
                    "email": email,
                    "phone": phone,
                    "password": PASSWORD,
                    "dob": "01/02/1985"
                })),
            )
            .await;
        assert_eq!(s, StatusCode::CREATED, "{body}");
        body["user_id"].as_str().unwrap().to_string()
    }

    async fn verify(&self, email: &str) {
        let link = self.mail.last_to(email).unwrap().link.unwrap();
        let token = link.split_once("token=").unwrap().1;
        let (s, _) = self
            .call("GET", &format!("/verify-email?token={token}"), None, None)
            .await;
        assert_eq!(s, StatusCode::OK);
    }

    async fn login(&self, email: &str) -> String {
        let (s, body) = self
            .call(
                "POST",
                "/login",
                None,
                Some(json!({ "identifier": email, "password": PASSWORD })),
            )
            .await;
        assert_eq!(s, StatusCode::OK, "{body}");
        assert_eq!(body["status"], "authenticated");
        body["access_token"].as_str().unwrap().to_string()
    }
}

#[tokio::test]
async fn registration_verification_and_login() {
    let srv = server();
    let (s, body) = srv.call("GET", "/health", None, None).await;
    assert_eq!((s, body), (StatusCode::OK, json!({ "status": "ok" })));

    srv.register("h@example.com", "+15550100001").await;
    let (s, body) = srv
        .call(
            "POST",
            "/login",
            None,
            Some(json!({ "identifier": "h@example.com", "password": PASSWORD })),
        )
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "EMAIL_NOT_VERIFIED");

    srv.verify("h@example.com").await;
    let token = srv.login("h@example.com").await;
    let (s, me) = srv.call("GET", "/me", Some(&token), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(me["email"], "h@example.com");
    let (s, body) = srv.call("GET", "/me", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED, "{body}");
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let srv = server();
    let (s, body) = srv
        .call(
            "POST",
            "/register",
            None,
            Some(json!({ "name": "X", "email": "x@example.com", "phone": "+15550100002", "password": "weak", "dob": "01/02/1985" })),
        )
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(
        body,
        json!({ "error": "VALIDATION_ERROR", "field": "password" })
    );

    srv.register("dup@example.com", "+15550100003").await;
    let (s, body) = srv
        .call(
            "POST",
            "/register",
            None,
            Some(json!({ "name": "D", "email": "dup@example.com", "phone": "+15550100004", "password": PASSWORD, "dob": "01/02/1985" })),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"], "USER_EXISTS");

    let req = Request::post("/login")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = srv.router.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let (s, _) = srv
        .call(
            "POST",
            "/login",
            None,
            Some(json!({ "identifier": "dup@example.com", "password": "Wr0ng!Password" })),
        )
        .await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn administration_then_gateway() {
    let srv = server();
    srv.app
        .identity
        .bootstrap("root@example.com", PASSWORD, false)
        .unwrap();
    let root = srv.login("root@example.com").await;

    let user = srv.register("g@example.com", "+15550100005").await;
    srv.verify("g@example.com").await;
    let user_token = srv.login("g@example.com").await;

    let catalog: Value = serde_json::from_str(CATALOG).unwrap();
    let (s, _) = srv
        .call(
            "POST",
            "/permissions/catalog",
            Some(&user_token),
            Some(catalog.clone()),
        )
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, body) = srv
        .call("POST", "/permissions/catalog", Some(&root), Some(catalog))
        .await;
    assert_eq!((s, body), (StatusCode::OK, json!({ "loaded": 8 })));

    let (s, group) = srv
        .call(
            "POST",
            "/groups",
            Some(&root),
            Some(json!({ "name": "readers" })),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let gid = group["id"].as_str().unwrap();
    let (s, _) = srv
        .call(
            "POST",
            &format!("/groups/{gid}/members"),
            Some(&root),
            Some(json!({ "user_id": user })),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);

    let (s, body) = srv
        .call("GET", "/api/clients", Some(&user_token), None)
        .await;
    assert_eq!(
        (s, body),
        (StatusCode::FORBIDDEN, json!({ "reason": "NO_GRANT" }))
    );

    let perm = srv
        .app
        .store
        .read(|t| t.permission_by("client", "read").unwrap().id.clone());
    let (s, gp) = srv
        .call(
            "POST",
            &format!("/groups/{gid}/permissions"),
            Some(&root),
            Some(json!({ "permission_id": perm, "tags": ["Marketing1"] })),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(gp["tags"], json!(["marketing1"]));

    let (s, body) = srv
        .call("GET", "/api/clients", Some(&user_token), None)
        .await;
    assert_eq!((s, body), (StatusCode::OK, json!([])));
    let (s, _) = srv.call("GET", "/api/clients", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    let (s, body) = srv
        .call("DELETE", &format!("/groups/{gid}"), Some(&root), None)
        .await;
    assert_eq!(s, StatusCode::CONFLICT, "{body}");
    assert_eq!(body["error"], "MEMBERS_PRESENT");
}

#[tokio::test]
async fn vault_secrets_need_a_fresh_second_factor() {
    let srv = server();
    let root_id = srv
        .app
        .identity
        .bootstrap("root@example.com", PASSWORD, false)
        .unwrap()
        .user_id;
    srv.app.rbac.load_permission_catalog(CATALOG).unwrap();
    let root = srv.app.rbac.actor(&root_id).unwrap();
    let user = srv.register("v@example.com", "+15550100006").await;
    srv.verify("v@example.com").await;
    let g = srv
        .app
        .rbac
        .upsert_group("vault", &root.master_id, &root, None)
        .unwrap();
    srv.app
        .rbac
        .modify_group_member(&user, &g.id, &root.master_id, &root, true)
        .unwrap();
    for action in ["create", "read"] {
        let p = srv
            .app
            .store
            .read(|t| t.permission_by("vault", action).unwrap().id.clone());
        srv.app
            .rbac
            .add_group_permission(&g.id, &p, &root, &["prod".into()])
            .unwrap();
    }
    let token = srv.login("v@example.com").await;
    let (s, body) = srv
        .call(
            "POST",
            "/vault/credentials",
            Some(&token),
            Some(json!({ "kind": "API_KEY", "audience": "CIAM", "environment": "PROD", "secret": "k-123" })),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    let id = body["id"].as_str().unwrap();
    let (s, body) = srv
        .call(
            "GET",
            &format!("/vault/credentials/{id}/secret"),
            Some(&token),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "MFA_REQUIRED");
    assert!(!body.to_string().contains("k-123"));
}
