//! HTTP front end for one classroom session.
//!
//! Student-facing routes (events, task completion, ratings, registration) are
//! open. Instructor routes need `Authorization: Bearer <token>` when the
//! session config sets `instructor_token`. The push stream also accepts
//! `?token=`.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use classaid_core::domain::{FeedbackMode, MessageId, RatingValue, StudentId, TaskId, TimestampMs};
use classaid_core::session::clock::ManualClock;
use classaid_core::session::push::PushMessage;
use classaid_core::session::{Service, ServiceError};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};

const STREAM_POLL: Duration = Duration::from_millis(250);
const STREAM_BUFFER: usize = 256;

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Service>,
    /// Present when the server runs on a manual clock that clients may move.
    pub clock: Option<Arc<ManualClock>>,
}

impl AppState {
    pub fn new(service: Service, clock: Option<Arc<ManualClock>>) -> Self {
        Self { service: Arc::new(service), clock }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.to_owned(), message: message.into() }
    }
}

pub fn status_for(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::UnknownSession(_)
        | ServiceError::UnknownStudent(_)
        | ServiceError::UnknownMessage(_)
        | ServiceError::UnknownAlert(_) => StatusCode::NOT_FOUND,
        ServiceError::DuplicateStudent(_)
        | ServiceError::AlreadyRated(_)
        | ServiceError::AlreadyCompleted(_)
        | ServiceError::AlreadyHandled(_) => StatusCode::CONFLICT,
        ServiceError::MalformedEvent(_) | ServiceError::NotAgentMessage(_) | ServiceError::WrongTask { .. } => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
        ServiceError::Io(_) | ServiceError::CorruptLog { .. } | ServiceError::Config(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self::new(status_for(&e), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn to_json<T: serde::Serialize>(v: T) -> ApiResult {
    serde_json::to_value(v)
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
}

fn instructor(state: &AppState, headers: &HeaderMap, sid: Option<&str>) -> Result<(), ApiError> {
    state.service.authorize(bearer(headers))?;
    if let Some(sid) = sid {
        state.service.check_session(sid)?;
    }
    Ok(())
}

/// Runs a blocking service call off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    let svc = state.service.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions/{sid}/events", post(submit_event))
        .route("/sessions/{sid}/students", post(register))
        .route("/sessions/{sid}/tasks/{tid}/complete", post(complete_task))
        .route("/sessions/{sid}/ratings", post(rate))
        .route("/sessions/{sid}/mode", post(set_mode))
        .route("/sessions/{sid}/students/{id}", get(student_detail))
        .route("/sessions/{sid}/students/{id}/notes", post(add_note))
        .route("/sessions/{sid}/snapshot", get(snapshot))
        .route("/sessions/{sid}/alerts", get(alerts))
        .route("/sessions/{sid}/stats", get(stats))
        .route("/sessions/{sid}/tick", post(tick))
        .route("/sessions/{sid}/clock", post(set_clock))
        .route("/sessions/{sid}/stream", get(stream))
        .route("/alerts/{id}/handled", post(mark_handled))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "session_id": state.service.session_id(),
        "manual_clock": state.clock.is_some(),
    }))
}

async fn submit_event(State(state): State<AppState>, Path(sid): Path<String>, Json(mut body): Json<Value>) -> ApiResult {
    state.service.check_session(&sid)?;
    if let Some(obj) = body.as_object_mut() {
        obj.entry("session_id").or_insert_with(|| Value::String(sid.clone()));
    }
    let receipt = blocking(&state, move |s| s.submit_value(&body)).await?;
    to_json(receipt)
}

#[derive(Deserialize)]
struct RegisterBody {
    student_id: StudentId,
    #[serde(default)]
    name: Option<String>,
}

async fn register(State(state): State<AppState>, Path(sid): Path<String>, Json(b): Json<RegisterBody>) -> ApiResult {
    state.service.check_session(&sid)?;
    let card = blocking(&state, move |s| s.register_student(b.student_id, b.name)).await?;
    to_json(card)
}

#[derive(Deserialize)]
struct CompleteBody {
    student_id: StudentId,
    #[serde(default)]
    timestamp: Option<TimestampMs>,
}

async fn complete_task(
    State(state): State<AppState>,
    Path((sid, tid)): Path<(String, String)>,
    Json(b): Json<CompleteBody>,
) -> ApiResult {
    state.service.check_session(&sid)?;
    let task = TaskId::from(tid.as_str());
    let receipt = blocking(&state, move |s| s.complete_task(&b.student_id, &task, b.timestamp)).await?;
    to_json(receipt)
}

#[derive(Deserialize)]
struct RatingBody {
    student_id: StudentId,
    message_id: MessageId,
    value: RatingValue,
    #[serde(default)]
    timestamp: Option<TimestampMs>,
}

async fn rate(State(state): State<AppState>, Path(sid): Path<String>, Json(b): Json<RatingBody>) -> ApiResult {
    state.service.check_session(&sid)?;
    let receipt = blocking(&state, move |s| s.rate_message(&b.student_id, &b.message_id, b.value, b.timestamp)).await?;
    to_json(receipt)
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum Scope {
    Class,
    Student,
    Students,
}

#[derive(Deserialize)]
struct ModeBody {
    scope: Scope,
    mode: FeedbackMode,
    #[serde(default)]
    student_id: Option<StudentId>,
    #[serde(default)]
    student_ids: Option<Vec<StudentId>>,
}

async fn set_mode(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(sid): Path<String>,
    Json(b): Json<ModeBody>,
) -> ApiResult {
    instructor(&state, &headers, Some(&sid))?;
    let targets = match (b.scope, b.student_id, b.student_ids) {
        (Scope::Class, None, None) => None,
        (Scope::Student, Some(id), None) => Some(vec![id]),
        (Scope::Students, None, Some(ids)) if !ids.is_empty() => Some(ids),
        _ => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "malformed_event",
                "scope class takes no students, student takes student_id, students takes a non-empty student_ids",
            ))
        }
    };
    let receipt = blocking(&state, move |s| s.set_mode(b.mode, targets)).await?;
    to_json(receipt)
}

async fn student_detail(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path((sid, id)): Path<(String, String)>,
) -> ApiResult {
    instructor(&state, &headers, Some(&sid))?;
    to_json(state.service.student_detail(&StudentId::from(id.as_str()))?)
}

#[derive(Deserialize)]
struct NoteBody {
    text: String,
}

async fn add_note(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path((sid, id)): Path<(String, String)>,
    Json(b): Json<NoteBody>,
) -> ApiResult {
    instructor(&state, &headers, Some(&sid))?;
    let student = StudentId::from(id.as_str());
    let entry = blocking(&state, move |s| s.add_note(&student, &b.text)).await?;
    to_json(entry)
}

async fn snapshot(State(state): State<AppState>, headers: HeaderMap, Path(sid): Path<String>) -> ApiResult {
    instructor(&state, &headers, Some(&sid))?;
    to_json(state.service.snapshot())
}

async fn alerts(State(state): State<AppState>, headers: HeaderMap, Path(sid): Path<String>) -> ApiResult {
    instructor(&state, &headers, Some(&sid))?;
    to_json(state.service.alerts())
}

async fn stats(State(state): State<AppState>, headers: HeaderMap, Path(sid): Path<String>) -> ApiResult {
    instructor(&state, &headers, Some(&sid))?;
    to_json(state.service.stats())
}

/// Ignores any request body.
async fn mark_handled(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    _body: axum::body::Bytes,
) -> ApiResult {
    instructor(&state, &headers, None)?;
    let alert = blocking(&state, move |s| s.mark_handled(&id)).await?;
    to_json(alert)
}

#[derive(Deserialize, Default)]
struct TickBody {
    #[serde(default)]
    now: Option<TimestampMs>,
}

async fn tick(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(sid): Path<String>,
    body: Option<Json<TickBody>>,
) -> ApiResult {
    instructor(&state, &headers, Some(&sid))?;
    let now = body.and_then(|b| b.0.now);
    let reports = blocking(&state, move |s| match now {
        Some(t) => s.tick(t),
        None => s.tick_now(),
    })
    .await?;
    to_json(reports)
}

#[derive(Deserialize)]
struct ClockBody {
    now: TimestampMs,
}

async fn set_clock(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(sid): Path<String>,
    Json(b): Json<ClockBody>,
) -> ApiResult {
    instructor(&state, &headers, Some(&sid))?;
    let clock = state
        .clock
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "wall_clock", "the server runs on the wall clock"))?;
    clock.set(b.now);
    Ok(Json(json!({"now": b.now})))
}

#[derive(Deserialize, Default)]
struct StreamQuery {
    #[serde(default)]
    token: Option<String>,
    #[serde(default)]
    last_event_id: Option<u64>,
}

fn sse_event(m: &PushMessage) -> Event {
    Event::default()
        .id(m.epoch.to_string())
        .event(m.event.name())
        .data(serde_json::to_string(m).unwrap_or_default())
}

/// Server-sent events. Each message carries its epoch as the event id; a
/// client reconnecting with `Last-Event-ID` gets what it missed, or a fresh
/// snapshot when the buffer no longer reaches back that far.
async fn stream(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(sid): Path<String>,
    Query(q): Query<StreamQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let token = bearer(&headers).map(str::to_owned).or(q.token);
    state.service.check_session(&sid)?;
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.last_event_id);
    let sub = state.service.subscribe(token.as_deref(), resume)?;
    let (tx, rx) = tokio::sync::mpsc::channel::<PushMessage>(STREAM_BUFFER);
    let backlog = sub.backlog;
    let receiver = sub.receiver;
    tokio::task::spawn_blocking(move || {
        for m in backlog {
            if tx.blocking_send(m).is_err() {
                return;
            }
        }
        loop {
            match receiver.recv_timeout(STREAM_POLL) {
                Ok(m) => {
                    if tx.blocking_send(m).is_err() {
                        return;
                    }
                }
                Err(std::sync::mpsc::RecvTimeoutError::Timeout) if !tx.is_closed() => {}
                Err(_) => return,
            }
        }
    });
    let events = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|m| (Ok(sse_event(&m)), rx))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
