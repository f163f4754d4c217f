//! HTTP service through which an expert answers pending queries of a running
//! training session.

use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cepmine_core::config::RunConfig;
use cepmine_core::session::{RatingMsg, RunStatus, SessionEvent, SessionState, SubmitError};
use cepmine_core::train::{train, SessionLink, TrainError, TrainSummary};
use serde::Deserialize;
use serde_json::json;

/// Shared between the request handlers and the thread folding trainer events.
pub struct AppState {
    session: Mutex<SessionState>,
    ratings: Mutex<Sender<RatingMsg>>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(session: SessionState, ratings: Sender<RatingMsg>) -> Shared {
        Arc::new(AppState { session: Mutex::new(session), ratings: Mutex::new(ratings) })
    }

    pub fn session(&self) -> MutexGuard<'_, SessionState> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        let status = match e {
            SubmitError::OutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            SubmitError::UnknownQuery(_) => StatusCode::NOT_FOUND,
            SubmitError::AlreadyAnswered(_) => StatusCode::GONE,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(e.status(), e.body_text())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingBody {
    pub rating: i64,
}

#[derive(Debug, Deserialize)]
pub struct TopParams {
    pub k: Option<usize>,
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/queries/pending", get(get_pending))
        .route("/queries/{id}/rating", post(post_rating))
        .route("/patterns/top", get(get_top))
        .route("/metrics", get(get_metrics))
        .with_state(state)
}

async fn get_session(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.session().info())
}

async fn get_pending(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.session().pending())
}

async fn post_rating(
    State(s): State<Shared>,
    Path(id): Path<u64>,
    body: Result<Json<RatingBody>, JsonRejection>,
) -> Result<StatusCode, ApiError> {
    let Json(body) = body?;
    let msg = s.session().submit(id, body.rating)?;
    let sent = s.ratings.lock().unwrap_or_else(|e| e.into_inner()).send(msg);
    if sent.is_err() {
        log::debug!("rating {id} accepted after the trainer stopped listening");
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn get_top(State(s): State<Shared>, Query(q): Query<TopParams>) -> impl IntoResponse {
    Json(s.session().top(q.k.unwrap_or(10)))
}

async fn get_metrics(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.session().metrics().to_vec())
}

/// Folds trainer events into the shared state until the trainer hangs up.
pub fn spawn_event_pump(state: Shared, events: Receiver<SessionEvent>) -> JoinHandle<()> {
    std::thread::spawn(move || {
        for e in events {
            state.session().apply(e);
        }
    })
}

/// A training run on its own thread, wired to a service state.
pub struct LiveSession {
    pub state: Shared,
    pub trainer: JoinHandle<Result<TrainSummary, TrainError>>,
    pub pump: JoinHandle<()>,
}

impl LiveSession {
    /// Waits for the trainer and for every event it published to be applied.
    pub fn join(self) -> Result<TrainSummary, TrainError> {
        let result = self.trainer.join().expect("trainer thread panicked");
        self.pump.join().expect("event thread panicked");
        result
    }
}

pub fn start_session(config: RunConfig) -> LiveSession {
    let (event_tx, event_rx) = mpsc::channel();
    let (rating_tx, rating_rx) = mpsc::channel();
    let state = AppState::new(SessionState::new(config.mining.schema.clone(), config.mining.scale), rating_tx);
    let pump = spawn_event_pump(state.clone(), event_rx);
    let trainer = std::thread::spawn(move || {
        let events = event_tx.clone();
        let _ = events.send(SessionEvent::Status(RunStatus::Training));
        let link = SessionLink { events: event_tx, ratings: Some(rating_rx) };
        let result = train(&config, Some(link));
        if let Err(e) = &result {
            log::error!("training failed: {e}");
            let _ = events.send(SessionEvent::Status(RunStatus::Failed));
        }
        result
    });
    LiveSession { state, trainer, pump }
}
