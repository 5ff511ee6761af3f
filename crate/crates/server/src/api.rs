//! REST surface over [`Store`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use aiano_core::block::BlockResult;
use aiano_core::evaluation::{evaluate, GoldSpec};
use aiano_core::export::{export_dataset, export_project, import_project};
use aiano_core::llm::{ChatMessage, Completion, GenerationParams, ProviderError};
use aiano_core::{
    Actor, ChatProvider, EntryFilter, EntryInput, Highlight, HttpProvider, MockProvider, Project,
    ProjectSpec, Store,
};
use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::header::{HeaderMap, HeaderName, HeaderValue, CONTENT_TYPE, ETAG, IF_MATCH};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::error::{parse_json, ApiError, ErrorClass};

pub const REQUEST_ID: HeaderName = HeaderName::from_static("x-request-id");
pub const ANNOTATOR_ID: HeaderName = HeaderName::from_static("x-annotator-id");

/// Extra wall-clock allowance on top of the provider timeout before a
/// generate request gives up.
const GENERATE_GRACE: Duration = Duration::from_secs(5);

/// Where generation requests go.
pub enum LlmBackend {
    Mock(Arc<MockProvider>),
    /// One HTTP client per project, built from its provider config and the
    /// API key found in the environment variable it names.
    Env(Mutex<HashMap<String, Arc<HttpProvider>>>),
}

impl LlmBackend {
    pub fn mock() -> Self {
        LlmBackend::Mock(Arc::new(MockProvider::new()))
    }

    pub fn from_env() -> Self {
        LlmBackend::Env(Mutex::new(HashMap::new()))
    }

    /// Never fails: a provider that cannot be built is replaced by one that
    /// reports why on first use, so plain blocks keep working without one.
    pub fn provider_for(&self, project: &Project) -> Arc<dyn ChatProvider> {
        match self {
            LlmBackend::Mock(mock) => mock.clone(),
            LlmBackend::Env(cache) => {
                let Some(config) = &project.provider else {
                    return Arc::new(Unavailable(ProviderError::InvalidConfig {
                        message: "project has no provider configured".into(),
                    }));
                };
                let mut cache = cache.lock().unwrap_or_else(|p| p.into_inner());
                if let Some(p) = cache.get(&project.meta.project_id) {
                    if p.config() == config {
                        return p.clone();
                    }
                }
                match HttpProvider::from_env(config.clone()) {
                    Ok(p) => {
                        let p = Arc::new(p);
                        cache.insert(project.meta.project_id.clone(), p.clone());
                        p
                    }
                    Err(e) => Arc::new(Unavailable(e)),
                }
            }
        }
    }
}

struct Unavailable(ProviderError);

impl ChatProvider for Unavailable {
    fn complete(&self, _: &[ChatMessage], _: &GenerationParams) -> Result<Completion, ProviderError> {
        Err(self.0.clone())
    }
}

pub struct AppState {
    pub store: Arc<Store>,
    pub llm: LlmBackend,
}

type Shared = State<Arc<AppState>>;

#[derive(Debug, Clone, Default)]
pub struct ApiConfig {
    /// Allowed CORS origins; empty disables the CORS layer.
    pub cors_origins: Vec<HeaderValue>,
}

pub fn router(state: Arc<AppState>, config: &ApiConfig) -> Router {
    let projects = Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/import", post(import))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/documents", post(ingest_documents))
        .route("/projects/{id}/documents/{doc_id}", get(get_document))
        .route("/projects/{id}/documents/{doc_id}/search", get(search_within))
        .route("/projects/{id}/search", get(search_corpus))
        .route("/projects/{id}/entries", post(create_entry).get(list_entries))
        .route("/projects/{id}/entries/{eid}", put(put_entry).get(get_entry))
        .route("/projects/{id}/entries/{eid}/highlights", post(add_highlight))
        .route("/projects/{id}/entries/{eid}/highlights/{hid}", delete(remove_highlight))
        .route("/projects/{id}/entries/{eid}/blocks/{bid}", put(set_block))
        .route("/projects/{id}/entries/{eid}/blocks/{bid}/generate", post(generate))
        .route("/projects/{id}/export/dataset", get(export_dataset_handler))
        .route("/projects/{id}/export/archive", get(export_archive))
        .route("/projects/{id}/evaluate", post(evaluate_handler))
        .route("/projects/{id}/audit", get(audit))
        .route("/health", get(health))
        .fallback(not_found)
        .with_state(state);

    let mut app = projects.layer(middleware::from_fn(request_id));
    if !config.cors_origins.is_empty() {
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(config.cors_origins.clone()))
                .allow_methods(tower_http::cors::Any)
                .allow_headers(tower_http::cors::Any)
                .expose_headers([REQUEST_ID, ETAG]),
        );
    }
    app
}

async fn request_id(request: Request, next: Next) -> Response {
    let id = request
        .headers()
        .get(&REQUEST_ID)
        .filter(|v| !v.is_empty() && v.len() <= 128)
        .cloned()
        .unwrap_or_else(|| {
            HeaderValue::from_str(&uuid::Uuid::new_v4().to_string()).expect("uuid is a valid header")
        });
    let method = request.method().clone();
    let path = request.uri().path().to_string();
    let mut response = next.run(request).await;
    tracing::info!(
        request_id = %id.to_str().unwrap_or("-"),
        %method,
        %path,
        status = response.status().as_u16(),
        "request"
    );
    response.headers_mut().insert(REQUEST_ID, id);
    response
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorClass::NotFound, "RouteNotFound", "no such endpoint")
}

/// JSON body extractor whose failures carry the path of the bad field.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::validation("MalformedBody", e.body_text()))?;
        Ok(JsonBody(parse_json(&bytes)?))
    }
}

fn query<T: DeserializeOwned>(q: Result<Query<T>, axum::extract::rejection::QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::validation("MalformedQuery", e.body_text()))
}

fn actor(headers: &HeaderMap) -> Actor {
    headers
        .get(&ANNOTATOR_ID)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.is_empty())
        .map(Actor::human)
        .unwrap_or_default()
}

/// Accepts `3`, `"3"` and `W/"3"`.
fn if_match(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    let Some(raw) = headers.get(IF_MATCH) else {
        return Ok(None);
    };
    let text = raw.to_str().unwrap_or("");
    let trimmed = text.trim().trim_start_matches("W/").trim_matches('"');
    trimmed
        .parse()
        .map(Some)
        .map_err(|_| ApiError::validation("InvalidIfMatch", format!("If-Match `{text}` is not a version number")))
}

fn required_version(headers: &HeaderMap) -> Result<u64, ApiError> {
    if_match(headers)?.ok_or_else(|| ApiError::validation("MissingIfMatch", "If-Match header with the entry version is required"))
}

fn json_bytes(status: StatusCode, body: String) -> Response {
    (status, [(CONTENT_TYPE, "application/json")], body).into_response()
}

fn with_etag<T: Serialize>(status: StatusCode, version: u64, body: &T) -> Response {
    let mut response = (status, Json(body)).into_response();
    response
        .headers_mut()
        .insert(ETAG, HeaderValue::from_str(&format!("\"{version}\"")).expect("digits are valid"));
    response
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal("TaskFailed", e.to_string()))?
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

// ---- projects -------------------------------------------------------------

async fn create_project(State(app): Shared, JsonBody(spec): JsonBody<ProjectSpec>) -> Result<Response, ApiError> {
    let project = blocking(move || Ok(app.store.create_project(spec)?)).await?;
    Ok((StatusCode::CREATED, Json(project)).into_response())
}

async fn list_projects(State(app): Shared) -> Json<Vec<Project>> {
    Json(app.store.list_projects())
}

async fn get_project(State(app): Shared, Path(id): Path<String>) -> Result<Json<Project>, ApiError> {
    Ok(Json(app.store.get_project(&id)?))
}

async fn import(State(app): Shared, body: Bytes) -> Result<Response, ApiError> {
    let text = String::from_utf8(body.to_vec())
        .map_err(|_| ApiError::validation("MalformedBody", "archive must be UTF-8"))?;
    let outcome = blocking(move || Ok(import_project(&app.store, &text)?)).await?;
    let body = json!({
        "project": outcome.project,
        "documents": outcome.documents,
        "entries": outcome.entries,
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

// ---- documents ------------------------------------------------------------

async fn ingest_documents(
    State(app): Shared,
    Path(id): Path<String>,
    JsonBody(payload): JsonBody<Value>,
) -> Result<Response, ApiError> {
    let report = blocking(move || Ok(app.store.ingest_documents(&id, &payload)?)).await?;
    Ok(Json(report).into_response())
}

async fn get_document(
    State(app): Shared,
    Path((id, doc_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let project = app.store.get_project(&id)?;
    let doc = app.store.get_document(&id, &doc_id)?;
    Ok(Json(Value::Object(doc.to_object(&project.body_field))).into_response())
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    q: String,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    20
}

async fn search_corpus(
    State(app): Shared,
    Path(id): Path<String>,
    params: Result<Query<SearchParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let params = query(params)?;
    Ok(Json(app.store.search_corpus(&id, &params.q, params.limit)?).into_response())
}

#[derive(Debug, Deserialize)]
struct WithinParams {
    q: String,
}

async fn search_within(
    State(app): Shared,
    Path((id, doc_id)): Path<(String, String)>,
    params: Result<Query<WithinParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let params = query(params)?;
    Ok(Json(app.store.search_within(&id, &doc_id, &params.q)?).into_response())
}

// ---- entries --------------------------------------------------------------

async fn create_entry(
    State(app): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    JsonBody(input): JsonBody<EntryInput>,
) -> Result<Response, ApiError> {
    let actor = actor(&headers);
    let entry = blocking(move || Ok(app.store.upsert_entry(&id, input, 0, &actor)?)).await?;
    Ok(with_etag(StatusCode::CREATED, entry.version, &entry))
}

async fn put_entry(
    State(app): Shared,
    Path((id, eid)): Path<(String, String)>,
    headers: HeaderMap,
    JsonBody(mut input): JsonBody<EntryInput>,
) -> Result<Response, ApiError> {
    let expected = required_version(&headers)?;
    if input.entry_id.is_empty() {
        input.entry_id = eid.clone();
    } else if input.entry_id != eid {
        return Err(ApiError::validation("EntryInvalid", "entry_id in body differs from the path"));
    }
    let actor = actor(&headers);
    let entry = blocking(move || Ok(app.store.upsert_entry(&id, input, expected, &actor)?)).await?;
    Ok(with_etag(StatusCode::OK, entry.version, &entry))
}

async fn get_entry(State(app): Shared, Path((id, eid)): Path<(String, String)>) -> Result<Response, ApiError> {
    let entry = app.store.get_entry(&id, &eid)?;
    Ok(with_etag(StatusCode::OK, entry.version, &entry))
}

async fn list_entries(
    State(app): Shared,
    Path(id): Path<String>,
    filter: Result<Query<EntryFilter>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let filter = query(filter)?;
    Ok(Json(app.store.list_entries(&id, &filter)?).into_response())
}

async fn add_highlight(
    State(app): Shared,
    Path((id, eid)): Path<(String, String)>,
    headers: HeaderMap,
    JsonBody(highlight): JsonBody<Highlight>,
) -> Result<Response, ApiError> {
    let expected = required_version(&headers)?;
    let actor = actor(&headers);
    let entry = blocking(move || Ok(app.store.add_highlight(&id, &eid, highlight, expected, &actor)?)).await?;
    Ok(with_etag(StatusCode::OK, entry.version, &entry))
}

async fn remove_highlight(
    State(app): Shared,
    Path((id, eid, hid)): Path<(String, String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let expected = required_version(&headers)?;
    let actor = actor(&headers);
    let entry = blocking(move || Ok(app.store.remove_highlight(&id, &eid, &hid, expected, &actor)?)).await?;
    Ok(with_etag(StatusCode::OK, entry.version, &entry))
}

#[derive(Debug, Deserialize)]
struct BlockValueBody {
    value: String,
}

async fn set_block(
    State(app): Shared,
    Path((id, eid, bid)): Path<(String, String, String)>,
    headers: HeaderMap,
    JsonBody(body): JsonBody<BlockValueBody>,
) -> Result<Response, ApiError> {
    let expected = required_version(&headers)?;
    let actor = actor(&headers);
    let entry =
        blocking(move || Ok(app.store.set_block_value(&id, &eid, &bid, &body.value, expected, &actor)?)).await?;
    Ok(with_etag(StatusCode::OK, entry.version, &entry))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateBody {
    /// Documents in focus; defaults to the highlighted ones.
    #[serde(default)]
    documents: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
pub struct GenerateResponse {
    #[serde(flatten)]
    pub result: BlockResult,
    /// Entry version after the generation was stored.
    pub version: u64,
}

async fn generate(
    State(app): Shared,
    Path((id, eid, bid)): Path<(String, String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body: GenerateBody = if body.iter().all(u8::is_ascii_whitespace) { GenerateBody::default() } else { parse_json(&body)? };
    let expected = if_match(&headers)?;
    let project = app.store.get_project(&id)?;
    if let Some(expected) = expected {
        let current = app.store.get_entry(&id, &eid)?.version;
        if current != expected {
            return Err(aiano_core::StoreError::VersionConflict { stored: current }.into());
        }
    }
    let provider = app.llm.provider_for(&project);
    let budget = project
        .provider
        .as_ref()
        .map(|p| Duration::from_secs_f64(p.timeout_s))
        .unwrap_or(Duration::from_secs(60))
        + GENERATE_GRACE;
    let task = blocking(move || {
        let outcome = app.store.generate_block(&id, &eid, &bid, provider.as_ref(), body.documents.as_deref())?;
        Ok(GenerateResponse { version: outcome.entry.version, result: outcome.result })
    });
    let response = tokio::time::timeout(budget, task)
        .await
        .map_err(|_| ApiError::from(ProviderError::Timeout { attempts: 0 }))??;
    Ok(with_etag(StatusCode::OK, response.version, &response))
}

// ---- export / evaluation --------------------------------------------------

#[derive(Debug, Deserialize)]
struct DatasetParams {
    question: String,
    answer: String,
}

async fn export_dataset_handler(
    State(app): Shared,
    Path(id): Path<String>,
    params: Result<Query<DatasetParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let params = query(params)?;
    let snapshot = app.store.snapshot(&id)?;
    let export = export_dataset(&snapshot, &params.question, &params.answer)?;
    Ok(json_bytes(StatusCode::OK, export.to_json()))
}

#[derive(Debug, Default, Deserialize)]
struct ArchiveParams {
    #[serde(default)]
    documents: bool,
    #[serde(default)]
    entries: bool,
}

async fn export_archive(
    State(app): Shared,
    Path(id): Path<String>,
    params: Result<Query<ArchiveParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let params = query(params)?;
    let snapshot = app.store.snapshot(&id)?;
    Ok(json_bytes(StatusCode::OK, export_project(&snapshot, params.documents, params.entries).to_json()))
}

async fn evaluate_handler(
    State(app): Shared,
    Path(id): Path<String>,
    JsonBody(gold): JsonBody<GoldSpec>,
) -> Result<Response, ApiError> {
    let snapshot = app.store.snapshot(&id)?;
    Ok(Json(evaluate(&snapshot, &gold)?).into_response())
}

async fn audit(State(app): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(app.store.audit(&id)?).into_response())
}
