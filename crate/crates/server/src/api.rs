//! HTTP API.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/v1/classify` | multipart `image`, raw image bytes, or JSON `{"image_url"}` |
//! | GET | `/v1/records` | filters `decision`, `victim_group`, `unresolved`, `from`, `to`; `page`, `page_size` |
//! | GET | `/v1/records/{id}` | |
//! | POST | `/v1/records/{id}/override` | `{"decision", "moderator_id", "note"}` |
//! | GET | `/v1/images/{hash}` | stored image bytes |
//! | GET | `/v1/health` | backend reachability |

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use chrono::{DateTime, Utc};
use memesentinel::{Decision, Harmfulness, Image, Pipeline};
use serde::Serialize;
use serde_json::json;
use tokio::sync::Semaphore;

use crate::assemble::Endpoints;
use crate::config::ServiceConfig;
use crate::store::{ModerationRecord, Override, Store, StoreError};

pub const MAX_NOTE_CHARS: usize = 2000;
pub const MAX_PAGE_SIZE: usize = 500;
pub const DEFAULT_PAGE_SIZE: usize = 50;
const PROBE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Pipeline,
    pub store: Arc<Store>,
    pub limiter: Arc<Semaphore>,
    pub config: Arc<ServiceConfig>,
    pub fetcher: reqwest::Client,
}

impl AppState {
    pub fn new(pipeline: Pipeline, store: Arc<Store>, config: ServiceConfig) -> Self {
        Self {
            pipeline,
            store,
            limiter: Arc::new(Semaphore::new(config.server.concurrency)),
            fetcher: reqwest::Client::builder()
                .timeout(Duration::from_secs(config.backends.timeout_secs.max(1)))
                .build()
                .unwrap_or_default(),
            config: Arc::new(config),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.server.max_body_bytes;
    Router::new()
        .route("/v1/classify", post(classify))
        .route("/v1/records", get(list_records))
        .route("/v1/records/{id}", get(get_record))
        .route("/v1/records/{id}/override", post(add_override))
        .route("/v1/images/{hash}", get(get_image))
        .route("/v1/health", get(health))
        // multipart framing needs headroom over the image itself
        .layer(DefaultBodyLimit::max(limit + 64 * 1024))
        .layer(middleware::from_fn_with_state(state.clone(), api_key))
        .layer(middleware::from_fn(request_log))
        .with_state(state)
}

async fn request_log(req: Request, next: Next) -> Response {
    let (method, path) = (req.method().clone(), req.uri().path().to_string());
    let resp = next.run(req).await;
    tracing::info!(%method, %path, status = resp.status().as_u16(), "request");
    resp
}

async fn api_key(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(key) = &s.config.server.api_key {
        let given = req.headers().get("x-api-key").and_then(|v| v.to_str().ok());
        if req.uri().path() != "/v1/health" && given != Some(key.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong x-api-key").into_response();
        }
    }
    next.run(req).await
}

// ---------------------------------------------------------------------------
// classify

fn too_large(len: usize, limit: usize) -> ApiError {
    ApiError::new(
        StatusCode::PAYLOAD_TOO_LARGE,
        format!("image is {len} bytes, limit is {limit}"),
    )
}

async fn read_payload(s: &AppState, req: Request) -> Result<(Vec<u8>, Option<String>), ApiError> {
    let limit = s.config.server.max_body_bytes;
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();

    if content_type.starts_with("multipart/form-data") {
        let mut multipart = Multipart::from_request(req, s)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
        let mut fallback = None;
        loop {
            let field = match multipart.next_field().await {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(e) => return Err(ApiError::new(e.status(), e.body_text())),
            };
            let is_image = field.name() == Some("image");
            let has_file = field.file_name().is_some();
            let name = field.file_name().map(str::to_string);
            if !is_image && !has_file {
                continue;
            }
            let bytes = field.bytes().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
            if is_image {
                return Ok((bytes.to_vec(), name));
            }
            fallback.get_or_insert((bytes.to_vec(), name));
        }
        return fallback.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "multipart body has no image field"));
    }

    let body = axum::body::to_bytes(req.into_body(), limit + 64 * 1024)
        .await
        .map_err(|_| ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, format!("body exceeds {limit} bytes")))?;
    if content_type.starts_with("application/json") {
        let value: serde_json::Value = serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid JSON: {e}")))?;
        let url = value
            .get("image_url")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "JSON body needs an image_url string"))?;
        let bytes = fetch_image(s, url, limit).await?;
        let source = (!url.starts_with("data:")).then(|| url.to_string());
        return Ok((bytes, source));
    }
    Ok((body.to_vec(), None))
}

async fn fetch_image(s: &AppState, url: &str, limit: usize) -> Result<Vec<u8>, ApiError> {
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, m);
    if let Some(rest) = url.strip_prefix("data:") {
        let (_, data) = rest
            .split_once(";base64,")
            .ok_or_else(|| bad("only base64 data URLs are supported".into()))?;
        return base64::engine::general_purpose::STANDARD
            .decode(data.trim())
            .map_err(|e| bad(format!("bad base64 in data URL: {e}")));
    }
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        return Err(bad(format!("unsupported image_url scheme: {url}")));
    }
    let resp = s
        .fetcher
        .get(url)
        .send()
        .await
        .map_err(|e| bad(format!("cannot fetch image_url: {e}")))?;
    if !resp.status().is_success() {
        return Err(bad(format!("image_url answered {}", resp.status())));
    }
    if let Some(len) = resp.content_length() {
        if len as usize > limit {
            return Err(too_large(len as usize, limit));
        }
    }
    let bytes = resp.bytes().await.map_err(|e| bad(format!("cannot fetch image_url: {e}")))?;
    Ok(bytes.to_vec())
}

async fn classify(State(s): State<AppState>, req: Request) -> Result<Response, ApiError> {
    if !s.config.stages.vlm {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "vlm stage is disabled"));
    }
    let _permit = s
        .limiter
        .clone()
        .try_acquire_owned()
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "too many classifications in flight"))?;

    let (bytes, source) = read_payload(&s, req).await?;
    let limit = s.config.server.max_body_bytes;
    if bytes.len() > limit {
        return Err(too_large(bytes.len(), limit));
    }
    let image = Image::from_bytes(bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    s.store.put_image(&image)?;

    let (verdict, trace, error) = match s.pipeline.classify(&image).await {
        Ok(run) => (run.verdict, run.trace, None),
        Err(f) => (f.verdict, f.trace, Some(f.error.to_string())),
    };
    let mut record = ModerationRecord::new(image.hash().to_string(), verdict, Utc::now());
    record.source = source;
    record.trace = Some(trace);
    record.error = error.clone();
    let record = s.store.insert(record)?;

    Ok(match error {
        None => (StatusCode::OK, Json(record)).into_response(),
        Some(message) => (
            StatusCode::BAD_GATEWAY,
            Json(json!({ "error": message, "record": record })),
        )
            .into_response(),
    })
}

// ---------------------------------------------------------------------------
// records

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordFilter {
    pub decision: Option<Harmfulness>,
    pub victim_group: Option<String>,
    pub unresolved: Option<bool>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub page: usize,
    pub page_size: usize,
}

impl RecordFilter {
    /// Parses query parameters. Unknown keys and malformed values are errors.
    pub fn parse(params: &HashMap<String, String>) -> Result<Self, String> {
        let mut f = RecordFilter {
            page: 1,
            page_size: DEFAULT_PAGE_SIZE,
            ..Default::default()
        };
        let time = |k: &str, v: &str| {
            DateTime::parse_from_rfc3339(v)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| format!("{k}: {e}"))
        };
        let bool_ = |k: &str, v: &str| match v.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(format!("{k} must be true or false")),
        };
        let mut keys: Vec<_> = params.keys().collect();
        keys.sort();
        for k in keys {
            let v = params[k].trim();
            match k.as_str() {
                "decision" | "harmful" => {
                    f.decision = Some(match v.to_ascii_lowercase().as_str() {
                        "yes" => Harmfulness::Yes,
                        "no" => Harmfulness::No,
                        "unresolved" => Harmfulness::Unresolved,
                        _ => return Err(format!("{k} must be yes, no or unresolved")),
                    })
                }
                "victim_group" if !v.is_empty() => f.victim_group = Some(v.to_string()),
                "victim_group" => return Err("victim_group is empty".into()),
                "unresolved" => f.unresolved = Some(bool_(k, v)?),
                "from" => f.from = Some(time(k, v)?),
                "to" => f.to = Some(time(k, v)?),
                "page" => {
                    f.page = v.parse().ok().filter(|p| *p >= 1).ok_or("page must be a positive integer")?;
                }
                "page_size" => {
                    f.page_size = v
                        .parse()
                        .ok()
                        .filter(|p| (1..=MAX_PAGE_SIZE).contains(p))
                        .ok_or_else(|| format!("page_size must be between 1 and {MAX_PAGE_SIZE}"))?;
                }
                other => return Err(format!("unknown filter {other:?}")),
            }
        }
        if let (Some(a), Some(b)) = (f.from, f.to) {
            if a > b {
                return Err("from is after to".into());
            }
        }
        Ok(f)
    }

    pub fn matches(&self, r: &ModerationRecord) -> bool {
        let effective = r.effective();
        self.decision.is_none_or(|d| d == effective)
            && self.unresolved.is_none_or(|u| u == (effective == Harmfulness::Unresolved))
            && self
                .victim_group
                .as_ref()
                .is_none_or(|g| r.verdict.victim_groups.iter().any(|v| v.eq_ignore_ascii_case(g)))
            && self.from.is_none_or(|t| r.created_at >= t)
            && self.to.is_none_or(|t| r.created_at < t)
    }
}

#[derive(Debug, Serialize)]
pub struct RecordPage {
    pub items: Vec<ModerationRecord>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub total_pages: usize,
}

async fn list_records(
    State(s): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<RecordPage>, ApiError> {
    let filter = RecordFilter::parse(&params).map_err(|m| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m))?;
    let matching: Vec<ModerationRecord> = s.store.snapshot().into_iter().filter(|r| filter.matches(r)).collect();
    let total = matching.len();
    let items = matching
        .into_iter()
        .skip((filter.page - 1).saturating_mul(filter.page_size))
        .take(filter.page_size)
        .collect();
    Ok(Json(RecordPage {
        items,
        page: filter.page,
        page_size: filter.page_size,
        total,
        total_pages: total.div_ceil(filter.page_size),
    }))
}

async fn get_record(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<ModerationRecord>, ApiError> {
    s.store
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("record {id} not found")))
}

async fn add_override(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ModerationRecord>, ApiError> {
    if s.store.get(&id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("record {id} not found")));
    }
    let unprocessable = |m: &str| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m.to_string());
    let value: serde_json::Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid JSON: {e}")))?;
    let decision = value
        .get("decision")
        .and_then(|v| v.as_str())
        .and_then(|d| Decision::from_str(d).ok())
        .ok_or_else(|| unprocessable("decision must be \"Yes\" or \"No\""))?;
    let moderator_id = value
        .get("moderator_id")
        .and_then(|v| v.as_str())
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .ok_or_else(|| unprocessable("moderator_id is required"))?;
    let note = match value.get("note") {
        None | Some(serde_json::Value::Null) => String::new(),
        Some(serde_json::Value::String(n)) => n.clone(),
        Some(_) => return Err(unprocessable("note must be a string")),
    };
    if note.chars().count() > MAX_NOTE_CHARS {
        return Err(unprocessable(&format!("note exceeds {MAX_NOTE_CHARS} characters")));
    }
    let entry = Override {
        decision,
        moderator_id: moderator_id.to_string(),
        note,
        at: Utc::now(),
    };
    Ok(Json(s.store.add_override(&id, entry)?))
}

async fn get_image(State(s): State<AppState>, Path(hash): Path<String>) -> Result<Response, ApiError> {
    let image = s
        .store
        .get_image(&hash)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("image {hash} not found")))?;
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, image.format().mime().parse().expect("static mime"));
    Ok((headers, image.bytes().to_vec()).into_response())
}

// ---------------------------------------------------------------------------
// health

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub backend: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub degraded: Vec<String>,
    pub probes: Vec<Probe>,
}

pub async fn probe_backends(pipeline: &Pipeline, endpoints: &Endpoints) -> Health {
    async fn run<F: std::future::Future<Output = Result<(), memesentinel::BackendError>>>(name: &str, f: F) -> Probe {
        let result = match tokio::time::timeout(PROBE_TIMEOUT, f).await {
            Ok(r) => r.map_err(|e| e.to_string()),
            Err(_) => Err("probe timed out".into()),
        };
        Probe {
            backend: name.into(),
            ok: result.is_ok(),
            error: result.err(),
        }
    }
    let ocr = async {
        match endpoints.ocr {
            Some(_) => Some(run("ocr", pipeline.ocr.ping()).await),
            None => None,
        }
    };
    let translation = async {
        match endpoints.translation {
            Some(_) => Some(run("translation", pipeline.translator.ping()).await),
            None => None,
        }
    };
    let vlm = async {
        match endpoints.vlm {
            Some(_) => Some(run("vlm", pipeline.vlm.ping()).await),
            None => None,
        }
    };
    let (a, b, c) = tokio::join!(ocr, translation, vlm);
    let probes: Vec<Probe> = [a, b, c].into_iter().flatten().collect();
    let degraded: Vec<String> = probes.iter().filter(|p| !p.ok).map(|p| p.backend.clone()).collect();
    Health {
        status: if degraded.is_empty() { "ok" } else { "degraded" },
        degraded,
        probes,
    }
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(probe_backends(&s.pipeline, &Endpoints::from_config(&s.config)).await)
}
