//! JSON-over-HTTP front end for [`StudyStore`]. Routes are documented in
//! `docs/api.md`.
//!
//! Admin routes take the `X-Admin-Key` header; rater routes take
//! `Authorization: Bearer <token>` as issued at study creation. Every write
//! is synced to the event log before the response is sent.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{Duration, Utc};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::eval::{
    long_csv, summary_csv, AuthError, CreateStudyRequest, NextItem, RubricScore, Scores,
    StoreError, StudyError, StudyStore,
};

pub const ADMIN_HEADER: &str = "x-admin-key";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: SocketAddr,
    pub admin_key: String,
    pub token_ttl: Duration,
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<StudyStore>>,
    admin_key: Arc<str>,
}

impl AppState {
    pub fn new(store: StudyStore, admin_key: &str) -> Self {
        Self {
            store: Arc::new(Mutex::new(store)),
            admin_key: admin_key.into(),
        }
    }

    fn store(&self) -> MutexGuard<'_, StudyStore> {
        // A panic while holding the lock cannot leave a half-applied event:
        // events are logged before they touch memory.
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/studies", post(create_study))
        .route("/studies/{id}", get(study_status))
        .route("/studies/{id}/next", get(next_item))
        .route("/studies/{id}/ratings", post(submit_rating))
        .route("/studies/{id}/results", get(results))
        .route("/studies/{id}/tokens", post(issue_token))
        .route("/studies/{id}/unlock", post(unlock))
        .route("/studies/{id}/close", post(close))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Opens the store and serves on `config.bind` until Ctrl-C or SIGTERM.
pub fn run(config: &ServiceConfig) -> Result<(), ServiceError> {
    let store = StudyStore::open(&config.data_dir, config.token_ttl)?;
    let state = AppState::new(store, &config.admin_key);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(config.bind).await?;
        log::info!("listening on {}", listener.local_addr()?);
        serve(listener, state, shutdown_signal()).await
    })?;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A service running on a background thread, stopped on drop.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<std::io::Result<()>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("service thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

/// Starts the service on a background thread. Bind to port 0 for an ephemeral port.
pub fn spawn(config: &ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    let store = StudyStore::open(&config.data_dir, config.token_ttl)?;
    let state = AppState::new(store, &config.admin_key);
    let std_listener = std::net::TcpListener::bind(config.bind)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            serve(listener, state, async {
                let _ = rx.await;
            })
            .await
        })
    });
    Ok(ServiceHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({"error": code, "message": message.into()}),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<AuthError> for ApiError {
    fn from(err: AuthError) -> Self {
        let status = match err {
            AuthError::Invalid | AuthError::Expired => StatusCode::UNAUTHORIZED,
            AuthError::WrongStudy => StatusCode::FORBIDDEN,
        };
        ApiError::new(status, "unauthorized", err.to_string())
    }
}

fn internal(err: impl std::fmt::Display) -> ApiError {
    log::error!("internal error: {err}");
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
}

/// Error mapping for admin callers, who may see cells and labels.
fn admin_error(err: StoreError) -> ApiError {
    use StudyError::*;
    match err {
        StoreError::UnknownStudy(id) => ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown study {id}")),
        StoreError::Study(e) => {
            let message = e.to_string();
            match e {
                MissingGenerations(cells) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "missing_generations", message)
                    .with("cells", json!(cells)),
                LabelLeak(cells) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "label_leak", message)
                    .with("cells", json!(cells)),
                Incomplete(missing) => ApiError::new(StatusCode::CONFLICT, "incomplete", message)
                    .with("missing", json!(missing)),
                NotRated(_) => ApiError::new(StatusCode::CONFLICT, "not_rated", message),
                UnknownRater | UnknownItem(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", message),
                _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_study", message),
            }
        }
        other => internal(other),
    }
}

/// Error mapping for raters. Messages are fixed strings so that nothing
/// about the hidden cell structure can leak.
fn rater_error(err: StoreError) -> ApiError {
    use StudyError::*;
    match err {
        StoreError::UnknownStudy(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", "unknown study"),
        StoreError::Study(e) => match e {
            UnknownItem(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", "item is not part of this study"),
            Validation(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", m),
            AlreadyRated(_) => ApiError::new(StatusCode::CONFLICT, "already_rated", "item already rated"),
            SubmissionReused(_) => ApiError::new(
                StatusCode::CONFLICT,
                "submission_reused",
                "submission_id was already used for another item",
            ),
            Closed => ApiError::new(StatusCode::CONFLICT, "closed", "study is closed"),
            UnknownRater => ApiError::new(StatusCode::FORBIDDEN, "forbidden", "rater is not in this study"),
            _ => internal(e),
        },
        other => internal(other),
    }
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let given = headers.get(ADMIN_HEADER).and_then(|v| v.to_str().ok());
    match given {
        Some(key) if !state.admin_key.is_empty() && key.as_bytes() == state.admin_key.as_bytes() => Ok(()),
        _ => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "admin key required")),
    }
}

fn bearer(headers: &HeaderMap) -> Result<&str, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or(ApiError::from(AuthError::Invalid))
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", format!("invalid body: {e}")))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn create_study(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let request: CreateStudyRequest = parse_json(&body)?;
    let mut store = state.store();
    let (study, tokens) = store.create_study(&request).map_err(admin_error)?;
    let body = json!({
        "study_id": study.study_id(),
        "n_items": study.definition().items.len(),
        "sampled_report_ids": study.definition().sampled_report_ids,
        "tokens": tokens.iter().map(|t| json!({
            "rater_id": t.rater_id,
            "token": t.token,
            "expires_at": t.expires_at,
        })).collect::<Vec<_>>(),
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn study_status(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    require_admin(&state, &headers)?;
    let store = state.store();
    let study = store.study(&id).map_err(admin_error)?;
    let def = study.definition();
    let progress: BTreeMap<&str, usize> = def
        .rater_ids
        .iter()
        .map(|r| (r.as_str(), study.rated_by(r)))
        .collect();
    Ok(Json(json!({
        "study_id": def.study_id,
        "status": study.status(),
        "n_items": def.items.len(),
        "rater_ids": def.rater_ids,
        "model_labels": def.model_labels,
        "ratings": study.score_count(),
        "complete": study.is_complete(),
        "progress": progress,
        "metadata": def.metadata,
    })))
}

async fn next_item(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let token = bearer(&headers)?;
    let mut store = state.store();
    let rater = store.authenticate(token, &id, Utc::now())?.to_string();
    let next = store.next_item(&id, &rater).map_err(rater_error)?;
    Ok(Json(match next {
        NextItem::Item { item, position, total } => json!({
            "status": "item",
            "item": item,
            "progress": {"position": position, "total": total},
        }),
        NextItem::Done { rated } => json!({"status": "done", "rated": rated}),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RatingBody {
    item_id: String,
    submission_id: String,
    scores: BTreeMap<String, Value>,
    #[serde(default)]
    rater_id: Option<String>,
}

async fn submit_rating(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let token = bearer(&headers)?;
    // Authenticate before looking at the body so that bad tokens never learn anything.
    let rater = state.store().authenticate(token, &id, Utc::now())?.to_string();
    let body: RatingBody = parse_json(&body)?;
    if body.rater_id.as_deref().is_some_and(|r| r != rater) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            "token does not belong to that rater",
        ));
    }
    let scores = Scores::from_map(&body.scores)
        .map_err(|m| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", m))?;
    let score = RubricScore {
        item_id: body.item_id,
        rater_id: rater,
        scores,
        submitted_at: Utc::now(),
        submission_id: body.submission_id,
    };
    let outcome = state.store().submit_rating(&id, score).map_err(rater_error)?;
    Ok(Json(json!({"status": outcome})))
}

#[derive(Deserialize)]
struct ResultsQuery {
    #[serde(default)]
    force: bool,
    #[serde(default)]
    table: Option<String>,
}

async fn results(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<ResultsQuery>,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let result = state.store().results(&id, q.force).map_err(admin_error)?;
    let csv = |body: String| ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response();
    match q.table.as_deref().unwrap_or("summary") {
        "summary" => Ok(csv(summary_csv(&result))),
        "long" => Ok(csv(long_csv(&result))),
        "json" => Ok(Json(result).into_response()),
        other => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "validation",
            format!("unknown table {other:?}, expected summary, long or json"),
        )),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RaterBody {
    rater_id: String,
}

async fn issue_token(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let body: RaterBody = parse_json(&body)?;
    let token = state.store().issue_token(&id, &body.rater_id).map_err(admin_error)?;
    Ok((StatusCode::CREATED, Json(token)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UnlockBody {
    rater_id: String,
    item_id: String,
}

async fn unlock(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    require_admin(&state, &headers)?;
    let body: UnlockBody = parse_json(&body)?;
    state
        .store()
        .unlock_rating(&id, &body.rater_id, &body.item_id)
        .map_err(admin_error)?;
    Ok(Json(json!({"status": "unlocked"})))
}

async fn close(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    require_admin(&state, &headers)?;
    state.store().close_study(&id).map_err(admin_error)?;
    Ok(Json(json!({"status": "closed"})))
}
