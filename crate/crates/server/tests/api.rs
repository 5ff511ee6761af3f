mod common;

use std::sync::Arc;

use aiano_core::{BlockEngine, MockProvider, Store};
use aiano_server::api::{router, ApiConfig, AppState, LlmBackend};
use axum::body::Body;
use axum::http::{HeaderValue, Request};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::*;

struct Resp {
    status: u16,
    headers: axum::http::HeaderMap,
    text: String,
}

impl Resp {
    fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<&str>, headers: &[(&str, &str)]) -> Resp {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = req
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let response = app.clone().oneshot(req).await.unwrap();
    let status = response.status().as_u16();
    let headers = response.headers().clone();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    Resp { status, headers, text: String::from_utf8(bytes.to_vec()).unwrap() }
}

fn app_with(store: Arc<Store>, config: &ApiConfig) -> Router {
    router(Arc::new(AppState { store, llm: LlmBackend::mock() }), config)
}

fn app() -> (Router, Arc<Store>) {
    let store = Arc::new(Store::in_memory());
    (app_with(store.clone(), &ApiConfig::default()), store)
}

async fn seeded(app: &Router) -> String {
    let created = send(app, "POST", "/projects", Some(&two_block_project("api").to_string()), &[]).await;
    assert_eq!(created.status, 201, "{}", created.text);
    let pid = created.json()["project_id"].as_str().unwrap().to_string();
    let ingest = send(app, "POST", &format!("/projects/{pid}/documents"), Some(&synthetic_corpus(12).to_string()), &[]).await;
    assert_eq!(ingest.status, 200, "{}", ingest.text);
    pid
}

#[tokio::test]
async fn health_and_request_ids() {
    let (app, _) = app();
    let r = send(&app, "GET", "/health", None, &[]).await;
    assert_eq!(r.status, 200);
    assert_eq!(r.json(), json!({"status": "ok"}));
    assert!(!r.headers["x-request-id"].is_empty());

    let echoed = send(&app, "GET", "/health", None, &[("x-request-id", "abc-123")]).await;
    assert_eq!(echoed.headers["x-request-id"], "abc-123");
    let missing = send(&app, "GET", "/nope", None, &[]).await;
    assert_eq!(missing.status, 404);
    assert!(missing.headers.contains_key("x-request-id"));
}

#[tokio::test]
async fn create_project_returns_definition() {
    let (app, _) = app();
    let r = send(&app, "POST", "/projects", Some(&two_block_project("Studie").to_string()), &[]).await;
    assert_eq!(r.status, 201);
    let p = r.json();
    assert_eq!(p["name"], "Studie");
    assert_eq!(p["blocks"][0]["mode"], "plain");
    assert_eq!(p["blocks"][1]["mode"], "collaborative");
    assert_eq!(p["levels"][0]["color"].as_str().unwrap().len(), 7);
    let pid = p["project_id"].as_str().unwrap();
    let fetched = send(&app, "GET", &format!("/projects/{pid}"), None, &[]).await;
    assert_eq!(fetched.json(), p);
}

#[tokio::test]
async fn invalid_projects_map_to_422_with_module_codes() {
    let (app, _) = app();
    let mut cyclic = two_block_project("zyklisch");
    cyclic["blocks"][0] = json!({
        "block_id": "question", "name": "Question", "mode": "collaborative", "system_prompt": "p",
        "input_sources": [{"kind": "block_ref", "block_id": "answer"}]
    });
    let r = send(&app, "POST", "/projects", Some(&cyclic.to_string()), &[]).await;
    assert_eq!(r.status, 422);
    assert_eq!(r.json()["code"], "Cycle");
    assert_eq!(r.json()["details"]["cycle"], json!(["answer", "question"]));

    let mut no_id = two_block_project("x");
    no_id["input_schema"]["fields"].as_array_mut().unwrap().remove(0);
    let r = send(&app, "POST", "/projects", Some(&no_id.to_string()), &[]).await;
    assert_eq!(r.json()["code"], "SchemaInvalid");
}

#[tokio::test]
async fn malformed_bodies_name_the_offending_field() {
    let (app, _) = app();
    let cases: Vec<(String, &str)> = vec![
        ("{".into(), ""),
        ("[]".into(), ""),
        ({ let mut p = two_block_project("x"); p["tags"] = json!([1]); p.to_string() }, "tags[0]"),
        ({ let mut p = two_block_project("x"); p["blocks"][1]["mode"] = json!("turbo"); p.to_string() }, "blocks[1].mode"),
        ({ let mut p = two_block_project("x"); p["input_schema"]["fields"][2]["kind"] = json!(3); p.to_string() }, "input_schema.fields[2].kind"),
        ({ let mut p = two_block_project("x"); p["levels"][0]["ordinal"] = json!(-1); p.to_string() }, "levels[0].ordinal"),
    ];
    for (body, path) in cases {
        // the validator must reject what the endpoint rejects
        assert!(serde_json::from_str::<aiano_core::ProjectSpec>(&body).is_err());
        let r = send(&app, "POST", "/projects", Some(&body), &[]).await;
        assert_eq!(r.status, 422, "{body}");
        let err = r.json();
        assert_eq!(err["code"], "MalformedBody");
        if !path.is_empty() {
            assert_eq!(err["details"]["path"], path, "{body}");
        }
    }
}

#[tokio::test]
async fn unknown_project_is_404() {
    let (app, _) = app();
    for uri in ["/projects/nope", "/projects/nope/search?q=x", "/projects/nope/export/archive"] {
        let r = send(&app, "GET", uri, None, &[]).await;
        assert_eq!(r.status, 404, "{uri}");
        assert_eq!(r.json()["code"], "ProjectNotFound");
    }
}

#[tokio::test]
async fn documents_and_search() {
    let (app, _) = app();
    let pid = seeded(&app).await;
    let doc = send(&app, "GET", &format!("/projects/{pid}/documents/d03"), None, &[]).await;
    assert_eq!(doc.json()["title"], "Meldung 3");
    assert!(doc.json()["text"].as_str().unwrap().starts_with("Meldung 3:"));

    let hits = send(&app, "GET", &format!("/projects/{pid}/search?q=windkraft&limit=5"), None, &[]).await.json();
    let ids: Vec<&str> = hits.as_array().unwrap().iter().map(|h| h["document_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["d01"]);

    let spans = send(&app, "GET", &format!("/projects/{pid}/documents/d03/search?q=BEZIRK"), None, &[]).await.json();
    assert_eq!(spans, json!([{"start": 14, "end": 20}]));

    let empty = send(&app, "GET", &format!("/projects/{pid}/search?q=%20"), None, &[]).await;
    assert_eq!((empty.status, empty.json()["code"].as_str()), (422, Some("EmptyQuery")));
    let missing_q = send(&app, "GET", &format!("/projects/{pid}/search"), None, &[]).await;
    assert_eq!(missing_q.status, 422);

    let bad = send(&app, "POST", &format!("/projects/{pid}/documents"), Some(r#"{"a": 1}"#), &[]).await;
    assert_eq!(bad.json()["code"], "PayloadNotArray");
    let partial = send(
        &app,
        "POST",
        &format!("/projects/{pid}/documents"),
        Some(r#"[{"document_id": "n1", "subject_id": "s", "text": "neu"}, {"document_id": "n2"}]"#),
        &[],
    )
    .await
    .json();
    assert_eq!(partial["accepted"], 1);
    assert_eq!(partial["rejected"][0]["index"], 1);
}

#[tokio::test]
async fn entry_versioning() {
    let (app, _) = app();
    let pid = seeded(&app).await;
    let base = format!("/projects/{pid}/entries");
    let created = send(&app, "POST", &base, Some(r#"{"entry_id": "e1", "subject_id": "s1"}"#), &[("x-annotator-id", "anna")]).await;
    assert_eq!(created.status, 201);
    assert_eq!(created.json()["version"], 1);
    assert_eq!(created.headers["etag"], "\"1\"");
    let dup = send(&app, "POST", &base, Some(r#"{"entry_id": "e1", "subject_id": "s1"}"#), &[]).await;
    assert_eq!((dup.status, dup.json()["code"].as_str()), (409, Some("VersionConflict")));

    let body = json!({
        "subject_id": "s1",
        "highlights": [{"highlight_id": "h1", "document_id": "d02", "level_id": "relevant", "start": 0, "end": 9, "text_snapshot": "Meldung 2"}],
        "block_values": {"question": "Worum geht es?"}
    })
    .to_string();
    let put = send(&app, "PUT", &format!("{base}/e1"), Some(&body), &[("if-match", "\"1\"")]).await;
    assert_eq!(put.status, 200, "{}", put.text);
    assert_eq!(put.json()["version"], 2);
    let got = send(&app, "GET", &format!("{base}/e1"), None, &[]).await;
    assert_eq!(got.json(), put.json());
    let got_json = got.json();
    let events: Vec<&str> = got_json["provenance"].as_array().unwrap().iter().map(|e| e["action"].as_str().unwrap()).collect();
    assert_eq!(events, ["highlight_added", "block_edited"]);
    assert_eq!(got.json()["provenance"][0]["actor"], json!({"type": "human", "annotator_id": "anonymous"}));

    let stale = send(&app, "PUT", &format!("{base}/e1"), Some(&body), &[("if-match", "1")]).await;
    assert_eq!(stale.status, 409);
    assert_eq!(stale.json()["code"], "VersionConflict");
    assert_eq!(stale.json()["details"]["stored_version"], 2);
    let unconditional = send(&app, "PUT", &format!("{base}/e1"), Some(&body), &[]).await;
    assert_eq!((unconditional.status, unconditional.json()["code"].as_str()), (422, Some("MissingIfMatch")));

    let wrong_snapshot = json!({"document_id": "d02", "level_id": "relevant", "start": 0, "end": 9, "text_snapshot": "falsch"}).to_string();
    let r = send(&app, "POST", &format!("{base}/e1/highlights"), Some(&wrong_snapshot), &[("if-match", "2")]).await;
    assert_eq!(r.json()["code"], "SnapshotMismatch");
    let out_of_range = json!({"document_id": "d02", "level_id": "relevant", "start": 5, "end": 9999, "text_snapshot": ""}).to_string();
    let r = send(&app, "POST", &format!("{base}/e1/highlights"), Some(&out_of_range), &[("if-match", "2")]).await;
    assert_eq!(r.json()["code"], "SpanOutOfBounds");

    let list = send(&app, "GET", &format!("{base}?subject_id=s1"), None, &[]).await.json();
    assert_eq!(list.as_array().unwrap().len(), 1);
    let none = send(&app, "GET", &format!("{base}?subject_id=zz"), None, &[]).await.json();
    assert_eq!(none, json!([]));
}

#[tokio::test]
async fn generate_matches_block_engine() {
    let (app, store) = app();
    let pid = seeded(&app).await;
    let base = format!("/projects/{pid}/entries/e1");
    send(&app, "POST", &format!("/projects/{pid}/entries"), Some(r#"{"entry_id": "e1", "subject_id": "s"}"#), &[]).await;
    send(&app, "PUT", &format!("{base}/blocks/question"), Some(r#"{"value": "Was prüft die Verwaltung?"}"#), &[("if-match", "1")]).await;
    let h = json!({"document_id": "d04", "level_id": "relevant", "start": 0, "end": 9, "text_snapshot": "Meldung 4"}).to_string();
    let r = send(&app, "POST", &format!("{base}/highlights"), Some(&h), &[("if-match", "2")]).await;
    assert_eq!(r.status, 200, "{}", r.text);

    let (project, _, ctx) = store.entry_context(&pid, "e1", None).unwrap();
    let expected = BlockEngine::new(&project)
        .execute_block(project.block("answer").unwrap(), &ctx, &MockProvider::new())
        .unwrap();

    let stale = send(&app, "POST", &format!("{base}/blocks/answer/generate"), None, &[("if-match", "1")]).await;
    assert_eq!(stale.status, 409);
    let r = send(&app, "POST", &format!("{base}/blocks/answer/generate"), None, &[]).await;
    assert_eq!(r.status, 200, "{}", r.text);
    let mut body = r.json();
    assert_eq!(body["version"], 4);
    body.as_object_mut().unwrap().remove("version");
    assert_eq!(body, serde_json::to_value(&expected).unwrap());

    let entry = send(&app, "GET", &base, None, &[]).await.json();
    assert_eq!(entry["block_values"]["answer"]["origin"], "ai_generated");
    let last = entry["provenance"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["action"], "block_generated");
    assert_eq!(last["payload"]["prompt_fingerprint"], expected.prompt_fingerprint.unwrap());

    let plain = send(&app, "POST", &format!("{base}/blocks/question/generate"), Some("{}"), &[]).await;
    assert_eq!(plain.json()["origin"], "human");
    assert_eq!(plain.json()["version"], 4);

    let unknown = send(&app, "POST", &format!("{base}/blocks/nope/generate"), None, &[]).await;
    assert_eq!((unknown.status, unknown.json()["code"].as_str()), (404, Some("UnknownBlock")));

    let audit = send(&app, "GET", &format!("/projects/{pid}/audit"), None, &[]).await.json();
    assert_eq!(audit["violations"], json!([]));
}

#[tokio::test]
async fn generate_without_provider_reports_and_does_not_hang() {
    let store = Arc::new(Store::in_memory());
    let app = router(Arc::new(AppState { store, llm: LlmBackend::from_env() }), &ApiConfig::default());
    let pid = seeded(&app).await;
    send(&app, "POST", &format!("/projects/{pid}/entries"), Some(r#"{"entry_id": "e1", "subject_id": "s", "block_values": {"question": "Q?"}}"#), &[]).await;
    let r = send(&app, "POST", &format!("/projects/{pid}/entries/e1/blocks/answer/generate"), None, &[]).await;
    assert_eq!((r.status, r.json()["code"].as_str()), (422, Some("InvalidConfig")));
}

#[tokio::test]
async fn export_import_evaluate() {
    let (app, _) = app();
    let pid = seeded(&app).await;
    let entries = format!("/projects/{pid}/entries");
    let body = json!({
        "entry_id": "q1",
        "subject_id": "s",
        "highlights": [{"document_id": "d05", "level_id": "relevant", "start": 0, "end": 9, "text_snapshot": "Meldung 5"}],
        "block_values": {"question": "Frage?", "answer": "Antwort."}
    });
    send(&app, "POST", &entries, Some(&body.to_string()), &[]).await;

    let uri = format!("/projects/{pid}/export/dataset?question=question&answer=answer");
    let a = send(&app, "GET", &uri, None, &[]).await;
    let b = send(&app, "GET", &uri, None, &[]).await;
    assert_eq!(a.status, 200);
    assert_eq!(a.text, b.text);
    let record = &a.json()[0];
    assert_eq!(record["passages"][0]["text"], "Meldung 5");
    assert_eq!(record["provenance_summary"]["answer_origin"], "human");
    let unknown = send(&app, "GET", &format!("/projects/{pid}/export/dataset?question=x&answer=answer"), None, &[]).await;
    assert_eq!(unknown.json()["code"], "UnknownBlock");

    let bare = send(&app, "GET", &format!("/projects/{pid}/export/archive"), None, &[]).await.json();
    assert!(bare.get("documents").is_none() && bare.get("entries").is_none());
    let full = send(&app, "GET", &format!("/projects/{pid}/export/archive?documents=true&entries=true"), None, &[]).await;
    let imported = send(&app, "POST", "/projects/import", Some(&full.text), &[]).await;
    assert_eq!(imported.status, 201, "{}", imported.text);
    assert_eq!(imported.json()["documents"], 12);
    let new_id = imported.json()["project"]["project_id"].as_str().unwrap().to_string();
    assert_ne!(new_id, pid);
    let copy = send(&app, "GET", &format!("/projects/{new_id}/export/dataset?question=question&answer=answer"), None, &[]).await;
    assert_eq!(copy.text, a.text);

    let mut future = full.json();
    future["format_version"] = json!("999");
    let r = send(&app, "POST", "/projects/import", Some(&future.to_string()), &[]).await;
    assert_eq!(r.json()["code"], "UnsupportedVersion");

    let report = send(&app, "POST", &format!("/projects/{pid}/evaluate"), Some(r#"{"q1": ["d05", "d06"]}"#), &[]).await.json();
    assert_eq!(report["per_question"]["q1"]["precision"], 1.0);
    assert_eq!(report["per_question"]["q1"]["recall"], 0.5);
    let bad_gold = send(&app, "POST", &format!("/projects/{pid}/evaluate"), Some(r#"{"q1": []}"#), &[]).await;
    assert_eq!(bad_gold.json()["code"], "EmptyGold");
}

#[tokio::test]
async fn cors_for_configured_origin() {
    let config = ApiConfig { cors_origins: vec![HeaderValue::from_static("http://localhost:5173")] };
    let app = app_with(Arc::new(Store::in_memory()), &config);
    let r = send(&app, "GET", "/health", None, &[("origin", "http://localhost:5173")]).await;
    assert_eq!(r.headers["access-control-allow-origin"], "http://localhost:5173");
    let other = send(&app, "GET", "/health", None, &[("origin", "http://evil.example")]).await;
    assert!(!other.headers.contains_key("access-control-allow-origin"));
}
