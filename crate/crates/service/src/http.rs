//! HTTP/1.1 JSON API and server-sent event stream.
//!
//! | method | path                         | body                |
//! |--------|------------------------------|---------------------|
//! | POST   | `/sessions`                  | `{config?, device_address?}` |
//! | GET    | `/sessions/{id}`             |                     |
//! | POST   | `/sessions/{id}/throws`      | `{player}`          |
//! | POST   | `/sessions/{id}/remeasure`   | `{boule_id}`        |
//! | POST   | `/sessions/{id}/score`       |                     |
//! | GET    | `/sessions/{id}/events`      | SSE; `?since=N` or `Last-Event-ID` |
//!
//! Errors are `{"error": code, "detail": message}`.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use boulescope_core::{BouleId, GameConfig, Measurement, RoundResult};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::events::GameEvent;
use crate::service::{ScoringService, ServiceError, Session, SessionView};

#[derive(Clone)]
pub struct AppState {
    pub service: ScoringService,
    /// Device used when a create request names none.
    pub default_device: Option<String>,
}

pub struct ApiError {
    status: StatusCode,
    code: String,
    detail: String,
}

impl ApiError {
    fn bad_request(detail: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request".into(),
            detail: detail.into(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Game(g) => match g {
                boulescope_core::GameError::InvalidConfig(_)
                | boulescope_core::GameError::UnknownPlayer(_)
                | boulescope_core::GameError::UnknownBoule(_)
                | boulescope_core::GameError::InvalidBouleId(_) => StatusCode::BAD_REQUEST,
                _ => StatusCode::CONFLICT,
            },
            ServiceError::DeviceUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::MeasurementFailed { .. } => StatusCode::BAD_GATEWAY,
            ServiceError::DeviceTimeout(_) => StatusCode::GATEWAY_TIMEOUT,
            ServiceError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            code: e.code().to_string(),
            detail: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "detail": self.detail }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub config: Option<GameConfig>,
    #[serde(default)]
    pub device_address: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct ThrowRequest {
    pub player: String,
}

#[derive(Debug, Deserialize)]
pub struct RemeasureRequest {
    pub boule_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasuredResponse {
    pub measurement: Measurement,
    pub view: SessionView,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub result: RoundResult,
    pub view: SessionView,
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    pub since: Option<u64>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/throws", post(throw))
        .route("/sessions/{id}/remeasure", post(remeasure))
        .route("/sessions/{id}/score", post(score))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

async fn create_session(
    State(app): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let Json(req) = body?;
    let device = req
        .device_address
        .or(app.default_device.clone())
        .ok_or_else(|| ApiError::bad_request("device_address is required"))?;
    let session = app
        .service
        .create_session(req.config.unwrap_or_default(), &device)
        .await?;
    Ok((StatusCode::CREATED, Json(SessionView::new(session.id(), &session.snapshot()))))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    Ok(Json(app.service.get_state(&id)?))
}

async fn throw(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ThrowRequest>, JsonRejection>,
) -> ApiResult<Json<MeasuredResponse>> {
    let Json(req) = body?;
    let (measurement, _) = app.service.throw(&id, &req.player).await?;
    Ok(Json(MeasuredResponse {
        measurement,
        view: app.service.get_state(&id)?,
    }))
}

async fn remeasure(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<RemeasureRequest>, JsonRejection>,
) -> ApiResult<Json<MeasuredResponse>> {
    let Json(req) = body?;
    let boule_id: BouleId = req
        .boule_id
        .parse()
        .map_err(|e: boulescope_core::GameError| ApiError::from(ServiceError::from(e)))?;
    let (measurement, _) = app.service.remeasure(&id, &boule_id).await?;
    Ok(Json(MeasuredResponse {
        measurement,
        view: app.service.get_state(&id)?,
    }))
}

async fn score(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ScoreResponse>> {
    let result = app.service.score_round(&id).await?;
    Ok(Json(ScoreResponse {
        result,
        view: app.service.get_state(&id)?,
    }))
}

fn sse_event(e: &GameEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(serde_json::to_value(e.kind()).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
        .data(serde_json::to_string(e).expect("event serializes"))
}

/// Backlog after `since`, then live events; seq numbers never repeat or go
/// backwards within one stream.
pub fn event_stream(session: Arc<Session>, since: u64) -> impl Stream<Item = GameEvent> + Send {
    // Subscribe before reading the backlog so nothing falls in between.
    let rx = session.subscribe();
    let backlog = session.events_since(since);
    let last = backlog.last().map_or(since, |e| e.seq);
    let live = stream::unfold((rx, session, last), |(mut rx, session, mut last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if e.seq > last => {
                    last = e.seq;
                    return Some((vec![e], (rx, session, last)));
                }
                Ok(_) => continue,
                Err(RecvError::Lagged(_)) => {
                    let missed = session.events_since(last);
                    if let Some(e) = missed.last() {
                        last = e.seq;
                        return Some((missed, (rx, session, last)));
                    }
                }
                Err(RecvError::Closed) => return None,
            }
        }
    })
    .flat_map(stream::iter);
    stream::iter(backlog).chain(live)
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let session = app.service.session(&id)?;
    let since = q.since.or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
    });
    let stream = event_stream(session, since.unwrap_or(0)).map(|e| Ok(sse_event(&e)));
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
