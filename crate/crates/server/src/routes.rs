use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr};
use std::sync::Arc;
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{ConnectInfo, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fairyland_core::store::MAX_PAGE_LIMIT;
use fairyland_core::{FieldError, ImageSlot, LibraryStore, ListFilter, Page, StoreError, StoryRequest};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::auth::{LoginOutcome, Sessions};
use crate::jobs::{JobTable, SubmitError, WorkerPool};
use crate::options::Options;

pub const DEFAULT_PAGE_LIMIT: usize = 20;

#[derive(Clone)]
pub struct AppState {
    pub sessions: Arc<Sessions>,
    pub options: Arc<Options>,
    pub store: Arc<LibraryStore>,
    pub jobs: Arc<JobTable>,
    pub pool: Arc<WorkerPool>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(Vec<FieldError>),
    Unauthorized,
    Throttled,
    NotFound(String),
    Unavailable(String),
    Internal(String),
    InsufficientStorage,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(fields) => (
                StatusCode::BAD_REQUEST,
                json!({"error": "invalid_request", "message": "request has invalid fields", "fields": fields}),
            ),
            ApiError::Unauthorized => (
                StatusCode::UNAUTHORIZED,
                json!({"error": "unauthorized", "message": "missing or invalid credentials"}),
            ),
            ApiError::Throttled => (
                StatusCode::TOO_MANY_REQUESTS,
                json!({"error": "too_many_attempts", "message": "too many failed logins; wait a minute"}),
            ),
            ApiError::NotFound(what) => (StatusCode::NOT_FOUND, json!({"error": "not_found", "message": what})),
            ApiError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, json!({"error": "unavailable", "message": m})),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": "internal", "message": m})),
            ApiError::InsufficientStorage => (
                StatusCode::INSUFFICIENT_STORAGE,
                json!({"error": "storage_full", "message": "library storage is full"}),
            ),
        };
        (status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownBook(id) | StoreError::InvalidId(id) => ApiError::NotFound(format!("unknown book {id}")),
            StoreError::MissingImage(slot) => ApiError::NotFound(format!("missing image {slot}")),
            StoreError::StorageFull => ApiError::InsufficientStorage,
            other => ApiError::Internal(other.to_string()),
        }
    }
}

fn field(name: &str, message: impl Into<String>) -> FieldError {
    FieldError { field: name.into(), message: message.into() }
}

/// Peer address when the server was started with connect info.
pub struct ClientAddr(pub Option<IpAddr>);

impl<S: Send + Sync> FromRequestParts<S> for ClientAddr {
    type Rejection = std::convert::Infallible;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, Self::Rejection> {
        Ok(ClientAddr(parts.extensions.get::<ConnectInfo<SocketAddr>>().map(|c| c.0.ip())))
    }
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/v1/options", get(options))
        .route("/v1/books", post(create_book).get(list_books))
        .route("/v1/books/{id}", get(get_book).delete(delete_book))
        .route("/v1/books/{id}/images/{slot}", get(get_image))
        .route("/v1/jobs/{id}", get(get_job))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/v1/auth/login", post(login))
        .merge(protected)
        .fallback(|| async { ApiError::NotFound("no such endpoint".into()) })
        .layer(middleware::from_fn(log_requests))
        .with_state(state)
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(%method, %path, status = resp.status().as_u16(), ms = started.elapsed().as_millis() as u64, "request");
    resp
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Result<Response, ApiError> {
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    match token {
        Some(t) if state.sessions.is_valid(t) => Ok(next.run(req).await),
        _ => Err(ApiError::Unauthorized),
    }
}

fn json_body(body: &Bytes) -> Result<Value, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(vec![field("body", format!("not valid JSON: {e}"))]))
}

#[derive(Deserialize)]
struct LoginBody {
    username: String,
    password: String,
}

async fn login(State(state): State<AppState>, ClientAddr(ip): ClientAddr, body: Bytes) -> Result<Json<Value>, ApiError> {
    let value = json_body(&body)?;
    let creds: LoginBody = serde_json::from_value(value)
        .map_err(|_| ApiError::BadRequest(vec![field("body", "expected {username, password}")]))?;
    match state.sessions.login(ip, &creds.username, &creds.password) {
        LoginOutcome::Granted { token, expires_at } => Ok(Json(json!({"token": token, "expires_at": expires_at}))),
        LoginOutcome::Denied => Err(ApiError::Unauthorized),
        LoginOutcome::Throttled => Err(ApiError::Throttled),
    }
}

async fn options(State(state): State<AppState>) -> Json<Options> {
    Json((*state.options).clone())
}

async fn create_book(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let value = json_body(&body)?;
    let request = StoryRequest::from_value(&value).map_err(|e| ApiError::BadRequest(e.0))?;
    let job_id = state.pool.submit(request).map_err(|e| match e {
        SubmitError::Full | SubmitError::Closed => ApiError::Unavailable(e.to_string()),
    })?;
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job_id}))).into_response())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = state.jobs.get(&id).ok_or_else(|| ApiError::NotFound(format!("unknown job {id}")))?;
    Ok(Json(job).into_response())
}

fn parse_num<T: std::str::FromStr>(q: &HashMap<String, String>, name: &str, errors: &mut Vec<FieldError>) -> Option<T> {
    let raw = q.get(name)?;
    match raw.trim().parse() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(field(name, "must be a non-negative integer"));
            None
        }
    }
}

fn list_params(q: &HashMap<String, String>) -> Result<(ListFilter, Page), ApiError> {
    let mut errors = Vec::new();
    let offset = parse_num::<usize>(q, "offset", &mut errors).unwrap_or(0);
    let limit = parse_num::<usize>(q, "limit", &mut errors).unwrap_or(DEFAULT_PAGE_LIMIT);
    if limit > MAX_PAGE_LIMIT {
        errors.push(field("limit", format!("must be at most {MAX_PAGE_LIMIT}")));
    }
    let age_min = parse_num::<u32>(q, "age_min", &mut errors);
    let age_max = parse_num::<u32>(q, "age_max", &mut errors);
    let age_range = match (age_min, age_max) {
        (None, None) => None,
        (lo, hi) => Some((lo.unwrap_or(0), hi.unwrap_or(u32::MAX))),
    };
    if let Some((lo, hi)) = age_range {
        if lo > hi {
            errors.push(field("age_min", "must not exceed age_max"));
        }
    }
    if !errors.is_empty() {
        return Err(ApiError::BadRequest(errors));
    }
    let language = q.get("language").map(|l| l.trim().to_string()).filter(|l| !l.is_empty());
    Ok((ListFilter { language, age_range }, Page { offset, limit }))
}

async fn list_books(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let (filter, page) = list_params(&q)?;
    let metas = state.store.list(&filter, page)?;
    Ok(Json(metas).into_response())
}

async fn get_book(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let bytes = state.store.book_json(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

/// Path slots: `cover` and `image1`..`image4`, any case.
fn path_slot(raw: &str) -> Option<ImageSlot> {
    let lower = raw.to_ascii_lowercase();
    ImageSlot::ALL.into_iter().find(|s| s.file_stem() == lower)
}

async fn get_image(State(state): State<AppState>, Path((id, slot)): Path<(String, String)>) -> Result<Response, ApiError> {
    let slot = path_slot(&slot).ok_or_else(|| ApiError::NotFound(format!("unknown image slot {slot}")))?;
    let (bytes, media_type) = state.store.image(&id, slot)?;
    Response::builder()
        .header(header::CONTENT_TYPE, media_type)
        .body(Body::from(bytes))
        .map_err(|e| ApiError::Internal(e.to_string()))
}

async fn delete_book(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    state.store.delete(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn list_params_defaults_and_errors() {
        let (f, p) = list_params(&q(&[])).unwrap();
        assert_eq!(f, ListFilter::default());
        assert_eq!(p, Page { offset: 0, limit: DEFAULT_PAGE_LIMIT });

        let (f, _) = list_params(&q(&[("language", "el"), ("age_min", "5")])).unwrap();
        assert_eq!(f.language.as_deref(), Some("el"));
        assert_eq!(f.age_range, Some((5, u32::MAX)));

        let Err(ApiError::BadRequest(errs)) = list_params(&q(&[("limit", "500"), ("offset", "x")])) else {
            panic!("expected field errors");
        };
        let names: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(names, ["offset", "limit"]);
    }

    #[test]
    fn path_slots_use_lowercase_names() {
        assert_eq!(path_slot("cover"), Some(ImageSlot::Cover));
        assert_eq!(path_slot("Image3"), Some(ImageSlot::Image3));
        assert_eq!(path_slot("image9"), None);
        assert_eq!(path_slot("book_cover"), None);
    }
}
