use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use chrono::{Duration, Utc};
use harmlens::incidents::IngestFormat;
use harmlens::Platform;
use harmlens_service::api::{router, AppState};
use harmlens_service::auth;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const SECRET: &[u8] = b"test-secret";
const FIXTURE: &[u8] = include_bytes!("../../core/fixtures/incidents-39.csv");

struct Harness {
    app: Router,
    tokens: Vec<String>,
}

fn harness() -> Harness {
    let mut p = Platform::in_memory();
    p.ingest(FIXTURE, IngestFormat::Csv).unwrap();
    let mut tokens = Vec::new();
    for id in ["ann-1", "ann-2"] {
        p.add_annotator(id, id).unwrap();
        let t = auth::issue(SECRET, id, Utc::now() + Duration::days(1));
        p.set_token_hash(id, &auth::token_hash(&t.token)).unwrap();
        tokens.push(t.token);
    }
    Harness { app: router(AppState::new(p, SECRET)), tokens }
}

impl Harness {
    async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value, bytes)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        let (s, v, _) = self.call(Method::GET, uri, None, None).await;
        (s, v)
    }

    async fn post(&self, uri: &str, who: usize, body: Value) -> (StatusCode, Value) {
        let (s, v, _) = self.call(Method::POST, uri, Some(&self.tokens[who]), Some(body)).await;
        (s, v)
    }

    async fn open_round(&self) {
        let (s, _) =
            self.post("/api/rounds", 0, json!({"label": "round-1", "incident_ids": ["SYN0001", "SYN0002"]})).await;
        assert_eq!(s, StatusCode::CREATED);
    }

    async fn annotate(&self, who: usize, incident: &str, selections: Value) -> (StatusCode, Value) {
        self.post("/api/annotations", who, json!({"incident_id": incident, "round_id": "round-1", "selections": selections}))
            .await
    }
}

fn sel(ht: &str, sh: &str, status: &str) -> Value {
    json!({"harm_type_id": ht, "specific_harm_id": sh, "status": status})
}

#[tokio::test]
async fn taxonomy_lists_nine_harm_types() {
    let h = harness();
    let (s, v) = h.get("/api/taxonomy").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["harm_types"].as_array().unwrap().len(), 9);
    let (s, v) = h.get("/api/taxonomy?version=9.9.9").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("UNKNOWN_TAXONOMY_VERSION")));
    let (s, v) = h.get("/api/taxonomy/diff?old=1.0.0&new=1.0.0").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["added"], json!([]));
}

#[tokio::test]
async fn incidents_page_and_lookup() {
    let h = harness();
    let (s, v) = h.get("/api/incidents?limit=10").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["items"].as_array().unwrap().len(), v["total"].as_u64()), (10, Some(39)));
    let (_, v) = h.get("/api/incidents?text=deepfake").await;
    assert_eq!(v["total"], 4);
    let (s, v) = h.get("/api/incidents/SYN0003").await;
    assert_eq!((s, v["id"].as_str()), (StatusCode::OK, Some("SYN0003")));
    let (s, v) = h.get("/api/incidents/NOPE").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("UNKNOWN_INCIDENT")));
    let (s, v) = h.get("/api/incidents?limit=0").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("INVALID_QUERY")));
    let (s, v) = h.get("/api/incidents?limit=lots").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("INVALID_PARAMETER")));
}

#[tokio::test]
async fn writes_require_a_valid_token() {
    let h = harness();
    let body = json!({"label": "r", "incident_ids": ["SYN0001"]});
    let (s, v, _) = h.call(Method::POST, "/api/rounds", None, Some(body.clone())).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("MISSING_TOKEN")));

    let forged = auth::issue(b"wrong", "ann-1", Utc::now() + Duration::days(1));
    let (s, v, _) = h.call(Method::POST, "/api/rounds", Some(&forged.token), Some(body.clone())).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("INVALID_TOKEN")));

    let expired = auth::issue(SECRET, "ann-1", Utc::now() - Duration::seconds(5));
    let (s, v, _) = h.call(Method::POST, "/api/rounds", Some(&expired.token), Some(body.clone())).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("TOKEN_EXPIRED")));

    // Validly signed but not the token on record.
    let stale = auth::issue(SECRET, "ann-1", Utc::now() + Duration::days(2));
    let (s, v, _) = h.call(Method::POST, "/api/rounds", Some(&stale.token), Some(body)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("TOKEN_REVOKED")));
}

#[tokio::test]
async fn unknown_selection_is_422() {
    let h = harness();
    h.open_round().await;
    let (s, v) = h.annotate(0, "SYN0001", json!([sel("physical", "addiction", "actual")])).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "UNKNOWN_SELECTION");
    assert_eq!(v["field"], "selections");

    let (s, v) = h.annotate(0, "SYN0001", json!([sel("psychological", "addiction", "maybe")])).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("MALFORMED_STATUS")));
    let (s, v) = h.annotate(0, "SYN0009", json!([])).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("INCIDENT_NOT_IN_ROUND")));
    let (s, v, _) = h.call(Method::POST, "/api/annotations", Some(&h.tokens[0]), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("MALFORMED_REQUEST")));
}

#[tokio::test]
async fn cannot_submit_for_someone_else() {
    let h = harness();
    h.open_round().await;
    let (s, v) = h
        .post("/api/annotations", 0, json!({"incident_id": "SYN0001", "round_id": "round-1", "annotator_id": "ann-2"}))
        .await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::FORBIDDEN, Some("FORBIDDEN")));
}

#[tokio::test]
async fn annotation_lifecycle() {
    let h = harness();
    h.open_round().await;
    let (s, v) = h.annotate(0, "SYN0001", json!([sel("psychological", "addiction", "actual")])).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["annotator_id"], "ann-1");
    let (s, v) = h
        .annotate(
            0,
            "SYN0001",
            json!([sel("psychological", "addiction", "actual"), sel("societal-cultural", "damage-to-public-health", "potential")]),
        )
        .await;
    assert_eq!(s, StatusCode::OK, "resubmission replaces");
    assert_eq!(v["selections"].as_array().unwrap().len(), 2);
    h.annotate(1, "SYN0001", json!([sel("psychological", "addiction", "potential")])).await;
    h.annotate(1, "SYN0002", json!([sel("physical", "loss-of-life", "actual")])).await;

    // Open round: only your own annotations, and only with a token.
    let (s, _) = h.get("/api/rounds/round-1/annotations?incident=SYN0001").await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, v, _) =
        h.call(Method::GET, "/api/rounds/round-1/annotations?incident=SYN0001", Some(&h.tokens[1]), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 1);

    let (s, v) = h.get("/api/trend?rounds=round-1").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("ROUND_OPEN")));

    let (s, v) = h.post("/api/rounds/round-1/close", 1, json!(null)).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["closed_at"].is_string());
    let (s, v) = h.post("/api/rounds/round-1/close", 1, json!(null)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("ROUND_ALREADY_CLOSED")));
    let (s, v) = h.annotate(0, "SYN0002", json!([])).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("ROUND_CLOSED")));

    let (_, v) = h.get("/api/rounds/round-1/annotations").await;
    assert_eq!(v.as_array().unwrap().len(), 3);

    let (s, v) = h.get("/api/rounds/round-1/agreement").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["mode"].as_str(), v["distance"].as_str(), v["excluded_units"].as_u64()), (Some("set"), Some("masi"), Some(1)));
    let (_, v) = h.get("/api/rounds/round-1/agreement?mode=binary&status=distinguish&ci=true&resamples=200&seed=4").await;
    assert_eq!(v["mode"], "binary");
    let (s, v) = h.get("/api/rounds/round-1/agreement?ci=true&resamples=10").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("TOO_FEW_RESAMPLES")));
    let (s, _) = h.get("/api/rounds/round-1/agreement?mode=fuzzy").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = h.get("/api/rounds/round-1/sankey?incident=SYN0001").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["meta"]["annotators"], 2);
    let links: Vec<(String, String, u64)> = v["links"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| (l["source"].as_str().unwrap().into(), l["target"].as_str().unwrap().into(), l["weight"].as_u64().unwrap()))
        .collect();
    assert!(links.contains(&("harm_type:psychological".into(), "specific_harm:psychological/addiction".into(), 2)));

    let (_, v) = h.get("/api/rounds/round-1/summary").await;
    assert_eq!(v["incidents"].as_array().unwrap().len(), 2);
    assert_eq!(v["totals"], json!({"annotations": 3, "selections": 4}));
    let (s, _, body) = h.call(Method::GET, "/api/rounds/round-1/summary?format=csv", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().starts_with("incident_id,alpha,degenerate,annotators,disputed\n"));

    let (s, v) = h.get("/api/trend").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["points"].as_array().unwrap().len(), 1);

    let (s, v) = h.get("/api/rounds").await;
    assert_eq!((s, v.as_array().unwrap().len()), (StatusCode::OK, 1));
}

#[tokio::test]
async fn unknown_routes_and_rounds_are_404() {
    let h = harness();
    let (s, v) = h.get("/api/nothing").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NOT_FOUND")));
    let (s, v) = h.get("/api/rounds/zzz/summary").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("UNKNOWN_ROUND")));
    let (s, _) = h.get("/api/health").await;
    assert_eq!(s, StatusCode::OK);
}
