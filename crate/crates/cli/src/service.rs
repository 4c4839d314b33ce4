//! HTTP service: sessions, their event streams, artifacts and resumes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::convert::Infallible;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use mdforge_core::agent::{
    run_session, valid_session_id, ChannelCheckpoint, EventLog, PauseInfo, ResumeMessage, SessionConfig, SessionDeps,
    SessionEvent, Stage, Terminal, Trajectory,
};
use mdforge_core::config::Config;
use mdforge_core::thermo::parse_thermo;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::app::{new_session_id, open_session, AppError};

const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    App(#[from] AppError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
enum Phase {
    Running,
    Finished { terminal: Terminal },
    Failed { message: String },
}

struct Entry {
    id: String,
    task: String,
    created_ms: u64,
    dir: PathBuf,
    events: Arc<EventLog>,
    checkpoint: Arc<ChannelCheckpoint>,
    phase: Mutex<(Phase, Option<Instant>)>,
    trajectory: Mutex<Option<Trajectory>>,
}

impl Entry {
    fn phase(&self) -> Phase {
        self.phase.lock().unwrap_or_else(|e| e.into_inner()).0.clone()
    }

    fn finished_at(&self) -> Option<Instant> {
        self.phase.lock().unwrap_or_else(|e| e.into_inner()).1
    }

    fn settle(&self, phase: Phase) {
        *self.phase.lock().unwrap_or_else(|e| e.into_inner()) = (phase, Some(Instant::now()));
    }

    fn state_name(&self) -> &'static str {
        match self.phase() {
            Phase::Running if self.checkpoint.is_paused() => "paused",
            Phase::Running => "running",
            Phase::Finished { .. } => "finished",
            Phase::Failed { .. } => "failed",
        }
    }

    fn summary(&self) -> SessionSummary {
        let (terminal, error) = match self.phase() {
            Phase::Finished { terminal } => (Some(terminal), None),
            Phase::Failed { message } => (None, Some(message)),
            Phase::Running => (None, None),
        };
        SessionSummary {
            session_id: self.id.clone(),
            task: self.task.clone(),
            state: self.state_name(),
            created_ms: self.created_ms,
            last_seq: self.events.len() as u64,
            terminal,
            error,
        }
    }
}

#[derive(Debug, Serialize)]
struct SessionSummary {
    session_id: String,
    task: String,
    state: &'static str,
    created_ms: u64,
    last_seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    terminal: Option<Terminal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Shared state behind every handler.
pub struct ServiceState {
    cfg: Config,
    base: SessionDeps,
    ttl: Duration,
    token: Option<(HeaderName, String)>,
    sessions: Mutex<HashMap<String, Arc<Entry>>>,
    expired: Mutex<HashSet<String>>,
}

impl ServiceState {
    /// Reads the access token from the configured environment variable.
    pub fn new(cfg: Config, base: SessionDeps) -> Result<Self, ServiceError> {
        let token = match (&cfg.service.token_header, &cfg.service.token_env) {
            (Some(h), Some(env)) => {
                let name = HeaderName::try_from(h.as_str())
                    .map_err(|_| ServiceError::Config(format!("service.token_header {h:?} is not a header name")))?;
                let value = std::env::var(env)
                    .ok()
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| ServiceError::Config(format!("{env} must hold the service token")))?;
                Some((name, value))
            }
            _ => None,
        };
        Ok(Self {
            ttl: Duration::from_secs(cfg.service.session_ttl_s),
            cfg,
            base,
            token,
            sessions: Mutex::default(),
            expired: Mutex::default(),
        })
    }

    /// How long a finished session stays readable.
    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    /// Drops finished sessions older than the TTL, remembering their ids.
    fn sweep(&self) {
        let mut sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let stale: Vec<String> = sessions
            .values()
            .filter(|e| e.finished_at().is_some_and(|t| t.elapsed() >= self.ttl))
            .map(|e| e.id.clone())
            .collect();
        if stale.is_empty() {
            return;
        }
        let mut expired = self.expired.lock().unwrap_or_else(|e| e.into_inner());
        for id in stale {
            sessions.remove(&id);
            expired.insert(id);
        }
    }

    fn lookup(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.sweep();
        if let Some(e) = self.sessions.lock().unwrap_or_else(|e| e.into_inner()).get(id) {
            return Ok(e.clone());
        }
        match self.expired.lock().unwrap_or_else(|e| e.into_inner()).contains(id) {
            true => Err(ApiError::new(StatusCode::GONE, "EXPIRED", format!("session {id} has expired"))),
            false => Err(ApiError::not_found(format!("no session {id}"))),
        }
    }

    /// Wakes every paused session so its thread can finish.
    pub fn close_all(&self) {
        for e in self.sessions.lock().unwrap_or_else(|e| e.into_inner()).values() {
            e.checkpoint.close();
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type Shared = Arc<ServiceState>;

pub fn router(state: Shared) -> Router {
    let mut app = Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/events", get(session_events))
        .route("/sessions/{id}/resume", post(resume_session))
        .route("/sessions/{id}/artifacts", get(list_artifacts))
        .route("/sessions/{id}/artifacts/{*path}", get(get_artifact))
        .route("/sessions/{id}/thermo/{*path}", get(get_thermo))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state.clone());
    let origins = &state.cfg.service.cors_origins;
    if !origins.is_empty() {
        let allow = match origins.iter().any(|o| o == "*") {
            true => AllowOrigin::any(),
            false => AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok())),
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(allow)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers(Any),
        );
    }
    app
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

/// The token travels in the configured header, or as `?token=` for
/// clients (like browser event sources) that cannot set headers.
async fn require_token(State(state): State<Shared>, Query(q): Query<TokenQuery>, req: Request, next: Next) -> Response {
    if let Some((name, want)) = &state.token {
        let got = req.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_string).or(q.token);
        if got.as_deref() != Some(want.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or wrong token").into_response();
        }
    }
    next.run(req).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    task: String,
    #[serde(default)]
    session_id: Option<String>,
    /// Partial session config laid over the service's defaults.
    #[serde(default)]
    config: Option<Value>,
}

fn merged_config(base: &SessionConfig, overrides: Option<Value>) -> Result<SessionConfig, String> {
    let Some(overrides) = overrides else { return Ok(base.clone()) };
    let Value::Object(patch) = overrides else { return Err("config must be an object".into()) };
    let mut merged = serde_json::to_value(base).map_err(|e| e.to_string())?;
    if let Value::Object(m) = &mut merged {
        m.extend(patch);
    }
    serde_json::from_value(merged).map_err(|e| format!("config: {e}"))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

async fn create_session(State(state): State<Shared>, body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>) -> Result<Response, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if body.task.trim().is_empty() {
        return Err(ApiError::bad_request("task is empty"));
    }
    let scfg = merged_config(&state.cfg.session, body.config).map_err(ApiError::bad_request)?;
    scfg.validate(&state.base.reward).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let id = body.session_id.unwrap_or_else(new_session_id);
    if !valid_session_id(&id) {
        return Err(ApiError::bad_request(format!("invalid session id {id:?}")));
    }
    state.sweep();
    let entry = {
        let mut sessions = state.sessions.lock().unwrap_or_else(|e| e.into_inner());
        if sessions.contains_key(&id) || state.expired.lock().unwrap_or_else(|e| e.into_inner()).contains(&id) {
            return Err(ApiError::new(StatusCode::CONFLICT, "DUPLICATE", format!("session {id} already exists")));
        }
        let running = sessions.values().filter(|e| matches!(e.phase(), Phase::Running)).count();
        if running >= state.cfg.service.max_sessions {
            return Err(ApiError::new(
                StatusCode::TOO_MANY_REQUESTS,
                "TOO_MANY_SESSIONS",
                format!("{running} sessions are already running"),
            ));
        }
        let (deps, ctx) = open_session(&state.base, &state.cfg, &id)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "IO", e.to_string()))?;
        let checkpoint = Arc::new(ChannelCheckpoint::new());
        let ctx = ctx.with_checkpoint(checkpoint.clone());
        let entry = Arc::new(Entry {
            id: id.clone(),
            task: body.task.clone(),
            created_ms: now_ms(),
            dir: deps.session_dir(&id),
            events: ctx.events.clone(),
            checkpoint,
            phase: Mutex::new((Phase::Running, None)),
            trajectory: Mutex::default(),
        });
        sessions.insert(id.clone(), entry.clone());
        let worker = entry.clone();
        let task = body.task;
        tokio::task::spawn_blocking(move || {
            match run_session(&task, &scfg, &deps, &ctx) {
                Ok(traj) => {
                    let terminal = traj.terminal;
                    *worker.trajectory.lock().unwrap_or_else(|e| e.into_inner()) = Some(traj);
                    worker.settle(Phase::Finished { terminal });
                }
                Err(e) => {
                    if !ctx.events.is_closed() {
                        ctx.events.emit(Stage::Terminal, json!({ "terminal": "aborted", "error": e.to_string() }));
                    }
                    worker.settle(Phase::Failed { message: e.to_string() });
                }
            }
            worker.checkpoint.close();
        });
        entry
    };
    tracing::info!(session = %entry.id, "session started");
    let body = json!({
        "session_id": entry.id,
        "events_url": format!("/sessions/{}/events", entry.id),
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn list_sessions(State(state): State<Shared>) -> Json<Vec<SessionSummary>> {
    state.sweep();
    let sessions = state.sessions.lock().unwrap_or_else(|e| e.into_inner());
    let mut list: Vec<SessionSummary> = sessions.values().map(|e| e.summary()).collect();
    list.sort_by(|a, b| (a.created_ms, &a.session_id).cmp(&(b.created_ms, &b.session_id)));
    Json(list)
}

#[derive(Serialize)]
struct SessionDetail {
    #[serde(flatten)]
    summary: SessionSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    paused: Option<PauseInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<Trajectory>,
}

async fn get_session(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionDetail>, ApiError> {
    let e = state.lookup(&id)?;
    let trajectory = e.trajectory.lock().unwrap_or_else(|e| e.into_inner()).clone();
    Ok(Json(SessionDetail { summary: e.summary(), paused: e.checkpoint.paused(), trajectory }))
}

#[derive(Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

fn sse_event(e: &SessionEvent) -> Result<Event, Infallible> {
    Ok(Event::default()
        .id(e.seq.to_string())
        .event(e.stage.as_str())
        .data(serde_json::to_string(e).expect("event serializes")))
}

/// Events after `after` as they arrive; ends after the terminal event.
fn event_stream(log: Arc<EventLog>, after: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold((log, after, false), |(log, after, done)| async move {
        if done {
            return None;
        }
        loop {
            let batch = log.since(after);
            if let Some(last) = batch.last() {
                let next = last.seq;
                let ended = batch.iter().any(|e| e.stage == Stage::Terminal);
                return Some((batch, (log, next, ended)));
            }
            if log.is_closed() {
                return None;
            }
            tokio::time::sleep(POLL).await;
        }
    })
    .flat_map(|batch| stream::iter(batch.iter().map(sse_event).collect::<Vec<_>>()))
}

async fn session_events(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let e = state.lookup(&id)?;
    let after = match headers.get("last-event-id") {
        Some(v) => v
            .to_str()
            .ok()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| ApiError::bad_request("Last-Event-ID must be an event seq"))?,
        None => q.after.unwrap_or(0),
    };
    Ok(Sse::new(event_stream(e.events.clone(), after)).keep_alive(KeepAlive::default()))
}

async fn resume_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<ResumeMessage>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let e = state.lookup(&id)?;
    let Json(msg) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    e.checkpoint
        .resume(msg)
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "NOT_PAUSED", format!("session {id} is not paused")))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "session_id": id, "accepted": true }))).into_response())
}

/// `rel` inside `root`, refusing anything that climbs out of it.
fn resolve_inside(root: &Path, rel: &str) -> Option<PathBuf> {
    let rel = Path::new(rel);
    if rel.as_os_str().is_empty() || rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let root = root.canonicalize().ok()?;
    let path = root.join(rel).canonicalize().ok()?;
    path.starts_with(&root).then_some(path)
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, u64>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let path = entry.path();
        let Ok(meta) = entry.metadata() else { continue };
        if meta.is_dir() {
            walk(root, &path, out);
        } else if let Ok(rel) = path.strip_prefix(root) {
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.insert(rel.join("/"), meta.len());
        }
    }
}

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    size_bytes: u64,
}

async fn list_artifacts(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Vec<ArtifactEntry>>, ApiError> {
    let e = state.lookup(&id)?;
    let mut files = BTreeMap::new();
    walk(&e.dir, &e.dir, &mut files);
    Ok(Json(files.into_iter().map(|(path, size_bytes)| ArtifactEntry { path, size_bytes }).collect()))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => "application/json",
        Some("jsonl") => "application/x-ndjson",
        Some("svg") => "image/svg+xml",
        _ => "text/plain; charset=utf-8",
    }
}

async fn artifact_path(state: &ServiceState, id: &str, rel: &str) -> Result<PathBuf, ApiError> {
    let e = state.lookup(id)?;
    resolve_inside(&e.dir, rel)
        .filter(|p| p.is_file())
        .ok_or_else(|| ApiError::not_found(format!("no artifact {rel} in session {id}")))
}

async fn get_artifact(State(state): State<Shared>, UrlPath((id, rel)): UrlPath<(String, String)>) -> Result<Response, ApiError> {
    let path = artifact_path(&state, &id, &rel).await?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "IO", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], Body::from(bytes)).into_response())
}

/// Thermo columns of a log artifact, parsed server-side for charts.
async fn get_thermo(State(state): State<Shared>, UrlPath((id, rel)): UrlPath<(String, String)>) -> Result<Response, ApiError> {
    let path = artifact_path(&state, &id, &rel).await?;
    let text = tokio::fs::read_to_string(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "IO", e.to_string()))?;
    let series = parse_thermo(&text)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "NO_THERMO", e.to_string()))?;
    Ok(Json(series).into_response())
}

/// Binds `listen` and serves until Ctrl-C.
pub fn serve(cfg: Config, base: SessionDeps, listen: &str) -> Result<(), ServiceError> {
    let state = Arc::new(ServiceState::new(cfg, base)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|source| ServiceError::Bind { addr: listen.to_string(), source })?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        let shutdown = {
            let state = state.clone();
            async move {
                let _ = tokio::signal::ctrl_c().await;
                state.close_all();
            }
        };
        axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
        Ok(())
    })
}
