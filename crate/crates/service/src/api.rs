//! HTTP routes. Request and response bodies are JSON mirroring the core
//! types; errors are `{"error": <code>, "message": <text>}`.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tokio::sync::broadcast::error::RecvError;
use vitalnav_core::alarm::{AlarmId, AlarmState, OperatorVerdict, VerdictDecision};
use vitalnav_core::graph::GraphKind;
use vitalnav_core::{serialize_graph, EdgeLabel, EngineError, SessionId, VitalKind};

use crate::state::{AppState, Broadcast};

type Shared = Arc<AppState>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error: code.into(), message: message.into() } }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = e.code();
        let status = match code {
            "unknown_graph" | "unknown_session" | "unknown_alarm" | "unknown_node" => StatusCode::NOT_FOUND,
            "terminal_reached" | "nothing_to_undo" | "already_resolved" | "alarm_without_session" => {
                StatusCode::CONFLICT
            }
            "replay_mismatch" => StatusCode::BAD_REQUEST,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/graphs", get(list_graphs))
        .route("/graphs/{id}", get(get_graph))
        .route("/sessions", post(start_session))
        .route("/sessions/{id}/view", get(view))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/verdict", post(verdict))
        .route("/sessions/{id}/export", get(export))
        .route("/patient/entries", post(patient_entry))
        .route("/vitals", get(vitals))
        .route("/alarms", get(alarms))
        .route("/alarms/{id}/verdict", post(alarm_verdict))
        .route("/devices", get(devices))
        .route("/events", get(events))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub id: String,
    pub title: String,
    pub kind: GraphKind,
    pub entry: String,
    pub nodes: usize,
}

async fn list_graphs(State(state): State<Shared>) -> Json<Vec<GraphSummary>> {
    Json(state.read(|engine, _| {
        engine
            .graphs()
            .map(|g| GraphSummary {
                id: g.id().into(),
                title: g.title().into(),
                kind: g.kind(),
                entry: g.entry().into(),
                nodes: g.nodes().len(),
            })
            .collect()
    }))
}

async fn get_graph(State(state): State<Shared>, id: Result<Path<String>, PathRejection>) -> ApiResult<Response> {
    let Path(id) = id?;
    let body = state.read(|engine, _| engine.graphs().find(|g| g.id() == id).map(|g| serialize_graph(g)));
    match body {
        Some(body) => Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response()),
        None => Err(EngineError::UnknownGraph(id).into()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRequest {
    pub graph_id: String,
}

async fn start_session(
    State(state): State<Shared>,
    body: Result<Json<StartRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(request) = body?;
    let view = state.mutate(|engine, now| engine.start_session(&request.graph_id, now))?;
    Ok((StatusCode::CREATED, Json(view)))
}

fn session_id(path: Result<Path<u64>, PathRejection>) -> ApiResult<SessionId> {
    let Path(id) = path?;
    Ok(SessionId(id))
}

async fn view(State(state): State<Shared>, id: Result<Path<u64>, PathRejection>) -> ApiResult<impl IntoResponse> {
    let id = session_id(id)?;
    Ok(Json(state.read(|engine, now| engine.view(id, now))?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvanceRequest {
    pub choice: EdgeLabel,
}

async fn advance(
    State(state): State<Shared>,
    id: Result<Path<u64>, PathRejection>,
    body: Result<Json<AdvanceRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let id = session_id(id)?;
    let Json(request) = body?;
    Ok(Json(state.mutate(|engine, now| engine.advance(id, &request.choice, now))?))
}

async fn undo(State(state): State<Shared>, id: Result<Path<u64>, PathRejection>) -> ApiResult<impl IntoResponse> {
    let id = session_id(id)?;
    Ok(Json(state.mutate(|engine, now| engine.undo(id, now))?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub requirement: VitalKind,
    pub accept: bool,
}

async fn verdict(
    State(state): State<Shared>,
    id: Result<Path<u64>, PathRejection>,
    body: Result<Json<VerdictRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let id = session_id(id)?;
    let Json(request) = body?;
    let event = state.mutate(|engine, now| engine.record_verdict(id, request.requirement, request.accept, now))?;
    Ok(Json(event))
}

async fn export(State(state): State<Shared>, id: Result<Path<u64>, PathRejection>) -> ApiResult<impl IntoResponse> {
    let id = session_id(id)?;
    let log = state.read(|engine, _| engine.export_session(id))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], log.to_jsonl()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryRequest {
    pub kind: VitalKind,
    pub value: f64,
}

async fn patient_entry(
    State(state): State<Shared>,
    body: Result<Json<EntryRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(request) = body?;
    let outcome = state.mutate(|engine, now| engine.set_database_entry(request.kind, request.value, now, now))?;
    Ok(Json(outcome))
}

async fn vitals(State(state): State<Shared>) -> impl IntoResponse {
    Json(state.read(|engine, now| engine.store().snapshot_all(now)))
}

#[derive(Debug, Deserialize)]
pub struct AlarmQuery {
    pub state: Option<AlarmState>,
}

async fn alarms(
    State(state): State<Shared>,
    query: Result<Query<AlarmQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(query) = query?;
    let list = state.read(|engine, _| engine.list_alarms(query.state).into_iter().cloned().collect::<Vec<_>>());
    Ok(Json(list))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlarmVerdictRequest {
    pub decision: VerdictDecision,
    #[serde(default)]
    pub target: Option<String>,
}

async fn alarm_verdict(
    State(state): State<Shared>,
    id: Result<Path<u64>, PathRejection>,
    body: Result<Json<AlarmVerdictRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Path(id) = id?;
    let Json(request) = body?;
    let alarm = state.mutate(|engine, now| {
        let verdict = OperatorVerdict { decision: request.decision, target: request.target, timestamp: now };
        engine.resolve_alarm(AlarmId(id), verdict, now)
    })?;
    Ok(Json(alarm))
}

async fn devices(State(state): State<Shared>) -> impl IntoResponse {
    Json(state.devices().counts())
}

/// Item of a subscriber's event feed.
#[derive(Debug, Clone, PartialEq)]
pub enum FeedItem {
    Event(Arc<Broadcast>),
    /// The subscriber missed this many events; the feed ends after it.
    Gap(u64),
}

/// Turns a broadcast receiver into a feed that ends after the first gap.
pub fn feed(rx: broadcast::Receiver<Arc<Broadcast>>) -> impl Stream<Item = FeedItem> {
    stream::unfold(Some(rx), |rx| async move {
        let mut rx = rx?;
        match rx.recv().await {
            Ok(message) => Some((FeedItem::Event(message), Some(rx))),
            Err(RecvError::Lagged(missed)) => Some((FeedItem::Gap(missed), None)),
            Err(RecvError::Closed) => None,
        }
    })
}

/// Server-sent events, named after the engine event type. A subscriber that
/// falls too far behind gets one `gap` event with the number of missed
/// events and is then disconnected; it should re-read the view.
async fn events(State(state): State<Shared>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let stream = feed(state.subscribe()).map(|item| {
        Ok(match item {
            FeedItem::Event(message) => Event::default().event(message.name).data(&message.data),
            FeedItem::Gap(missed) => Event::default().event("gap").data(format!("{{\"missed\":{missed}}}")),
        })
    });
    Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}
