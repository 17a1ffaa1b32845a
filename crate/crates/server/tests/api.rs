use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use kgx_core::{ComparisonReport, SingleAnalysisReport};
use kgx_server::{router, Store};
use serde_json::Value;
use tower::ServiceExt;

fn fixture(name: &str) -> Vec<u8> {
    fs::read(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)).unwrap()
}

struct Api {
    app: Router,
    store: Arc<Store>,
    _dir: tempfile::TempDir,
}

impl Api {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path()).unwrap());
        Api {
            app: router(store.clone()),
            store,
            _dir: dir,
        }
    }

    async fn call(&self, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        let (s, b) = self.call(Method::GET, uri, Vec::new()).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    async fn upload(&self, name: &str) -> String {
        let (s, b) = self.call(Method::POST, "/api/systems", fixture(name)).await;
        assert!(s.is_success(), "{s}");
        serde_json::from_slice::<Value>(&b).unwrap()["id"].as_str().unwrap().to_owned()
    }
}

fn assert_error(status: StatusCode, body: &Value, expected: StatusCode, code: &str) {
    assert_eq!(status, expected, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[tokio::test]
async fn upload_list_and_metadata() {
    let api = Api::new();
    let (s, b) = api.call(Method::POST, "/api/systems", fixture("system_a.jsonl")).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = serde_json::from_slice::<Value>(&b).unwrap()["id"].as_str().unwrap().to_owned();
    let (s, _) = api.call(Method::POST, "/api/systems", fixture("system_a.jsonl")).await;
    assert_eq!(s, StatusCode::OK);
    let id_b = api.upload("system_b.jsonl").await;

    let (s, list) = api.get("/api/systems").await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap()).collect();
    assert_eq!(ids, vec![id.as_str(), id_b.as_str()]);

    let (s, meta) = api.get(&format!("/api/systems/{id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(meta["header"]["system_name"], "system-a");
    assert_eq!(meta["record_count"], 40);
}

#[tokio::test]
async fn analysis_matches_store_and_is_cached() {
    let api = Api::new();
    let id = api.upload("system_a.jsonl").await;
    let uri = format!("/api/systems/{id}/analysis?metric=mrr,hits@1&feature=group&ci=bootstrap&ci_level=0.9&ci_seed=3");
    let (s, first) = api.call(Method::GET, &uri, Vec::new()).await;
    assert_eq!(s, StatusCode::OK);
    let (_, second) = api.call(Method::GET, &uri, Vec::new()).await;
    assert_eq!(first, second);
    assert_eq!(api.store.compute_count(), 1);
    let report: SingleAnalysisReport = serde_json::from_slice(&first).unwrap();
    assert!((report.overall.values[&kgx_core::Metric::Mrr] - 0.625).abs() < 1e-12);
    assert_eq!(report.features["group"].len(), 2);
    assert_eq!(report.ci.unwrap().level, 0.9);
    assert!(report.features["group"][0].intervals[&kgx_core::Metric::Mrr].is_some());
}

#[tokio::test]
async fn compare_reports_flip() {
    let api = Api::new();
    let a = api.upload("system_a.jsonl").await;
    let b = api.upload("system_b.jsonl").await;
    let (s, body) = api.call(Method::GET, &format!("/api/compare?ids={a},{b}&metric=mrr&feature=group"), Vec::new()).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let cmp: ComparisonReport = serde_json::from_slice(&body).unwrap();
    assert_eq!(cmp.flips().len(), 1);
    for c in cmp.per_system.values() {
        assert!((c.b_eq - 0.5).abs() < 1e-12);
        assert_eq!(c.b_eq + c.b_neq, 1.0);
    }
}

#[tokio::test]
async fn drill_down_pages() {
    let api = Api::new();
    let id = api.upload("system_a.jsonl").await;
    let (s, page) = api.get(&format!("/api/systems/{id}/buckets/group/long/examples?offset=5&limit=3")).await;
    assert_eq!(s, StatusCode::OK, "{page}");
    assert_eq!(page["total"], 20);
    let recs = page["records"].as_array().unwrap();
    assert_eq!(recs.len(), 3);
    assert!(recs.iter().all(|r| r["features"]["group"] == "long" && r["gold_rank"] == 4));
    // Labels with spaces and brackets arrive percent-encoded.
    let (s, page) = api.get(&format!("/api/systems/{id}/buckets/relation-label/located%20in/examples")).await;
    assert_eq!(s, StatusCode::OK, "{page}");
    assert_eq!(page["total"], 20);
}

#[tokio::test]
async fn delete_removes_system() {
    let api = Api::new();
    let id = api.upload("system_a.jsonl").await;
    let (s, _) = api.call(Method::DELETE, &format!("/api/systems/{id}"), Vec::new()).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, body) = api.get(&format!("/api/systems/{id}")).await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "not_found");
    let (_, list) = api.get("/api/systems").await;
    assert_eq!(list, Value::Array(vec![]));
}

#[tokio::test]
async fn error_statuses_carry_codes() {
    let api = Api::new();
    let a = api.upload("system_a.jsonl").await;
    let c = api.upload("other_dataset.jsonl").await;

    let (s, b) = api.call(Method::POST, "/api/systems", b"not json\n".to_vec()).await;
    assert_error(s, &serde_json::from_slice(&b).unwrap(), StatusCode::BAD_REQUEST, "validation_error");

    let cases: Vec<(String, StatusCode, &str)> = vec![
        (format!("/api/systems/{}", "0".repeat(64)), StatusCode::NOT_FOUND, "not_found"),
        (format!("/api/systems/{}/analysis", "f".repeat(64)), StatusCode::NOT_FOUND, "not_found"),
        (format!("/api/compare?ids={a},{c}&metric=mrr"), StatusCode::CONFLICT, "comparability_error"),
        (format!("/api/compare?ids={a}"), StatusCode::BAD_REQUEST, "bad_request"),
        (format!("/api/compare?ids={a},{}", "e".repeat(64)), StatusCode::NOT_FOUND, "not_found"),
        (format!("/api/systems/{a}/analysis?metric=hits@0"), StatusCode::BAD_REQUEST, "bad_request"),
        (format!("/api/systems/{a}/analysis?colour=red"), StatusCode::BAD_REQUEST, "bad_request"),
        (format!("/api/systems/{a}/analysis?ci=bootstrap&ci_level=1.5"), StatusCode::BAD_REQUEST, "bad_request"),
        (format!("/api/systems/{a}/analysis?feature=head-frequency"), StatusCode::BAD_REQUEST, "invalid_feature"),
        (format!("/api/systems/{a}/analysis?feature=nonexistent"), StatusCode::BAD_REQUEST, "invalid_feature"),
        (format!("/api/systems/{a}/buckets/group/medium/examples"), StatusCode::NOT_FOUND, "unknown_bucket"),
        (format!("/api/systems/{a}/buckets/group/long/examples?limit=5000"), StatusCode::BAD_REQUEST, "bad_request"),
        ("/api/nothing".to_owned(), StatusCode::NOT_FOUND, "no_route"),
    ];
    for (uri, status, code) in cases {
        let (s, body) = api.get(&uri).await;
        assert_eq!(s, status, "{uri}: {body}");
        assert_eq!(body["code"], code, "{uri}: {body}");
    }
}
