//! HTTP and WebSocket front end over [`realign::session::Session`].
//!
//! Each session sits behind its own mutex, so requests for one session are
//! serialised while different sessions run concurrently. Learning work runs
//! on the blocking pool.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use realign::report::Event;
use realign::scenario::Scenario;
use realign::session::{DragCorrection, DragOutcome, Session, SessionParams, Snapshot};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tower_http::services::ServeDir;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Applied when a create request carries no parameters of its own.
    pub defaults: SessionParams,
    /// Directory served at `/` (the UI bundle).
    pub static_dir: Option<PathBuf>,
}

struct Entry {
    session: Mutex<Session>,
    events: broadcast::Sender<Event>,
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<u64, Arc<Entry>>>>,
    next_id: Arc<AtomicU64>,
    defaults: SessionParams,
}

impl AppState {
    pub fn new(defaults: SessionParams) -> Self {
        Self {
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
            defaults,
        }
    }

    fn entry(&self, id: u64) -> Result<Arc<Entry>, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(&id)
            .cloned()
            .ok_or(ApiError::UnknownSession(id))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no session with id {0}")]
    UnknownSession(u64),
    #[error(transparent)]
    Core(#[from] realign::Error),
    #[error("worker failed: {0}")]
    Worker(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use realign::Error as E;
        let status = match &self {
            Self::UnknownSession(_) => StatusCode::NOT_FOUND,
            Self::Core(E::IllegalPhase { .. }) => StatusCode::CONFLICT,
            Self::Core(E::Io(_)) | Self::Worker(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Self::Core(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub scenario: Scenario,
    #[serde(default)]
    pub params: Option<SessionParams>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: u64,
    pub snapshot: Snapshot,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Stepped {
    pub events: Vec<Event>,
    pub snapshot: Snapshot,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Corrected {
    #[serde(flatten)]
    pub outcome: DragOutcome,
    pub events: Vec<Event>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventPage {
    pub events: Vec<Event>,
    /// Pass back as `since` to get only newer events.
    pub cursor: usize,
}

#[derive(Debug, Default, Deserialize)]
pub struct Since {
    #[serde(default)]
    pub since: usize,
}

pub fn router(config: &ServerConfig) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/correction", post(correction))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(AppState::new(config.defaults));
    match &config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Runs `f` on the session off the async runtime, then broadcasts whatever
/// events it appended.
async fn with_session<T, F>(entry: Arc<Entry>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> realign::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let mut session = entry.session.lock().expect("session lock");
        let cursor = session.events().len();
        let out = f(&mut session);
        for e in session.events_since(cursor) {
            // No subscribers is fine.
            let _ = entry.events.send(e.clone());
        }
        out
    })
    .await
    .map_err(|e| ApiError::Worker(e.to_string()))?
    .map_err(ApiError::from)
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateSession>) -> Result<Response, ApiError> {
    let session = Session::new(req.scenario, req.params.unwrap_or(state.defaults))?;
    let snapshot = session.snapshot();
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let (events, _) = broadcast::channel(1024);
    let entry = Arc::new(Entry {
        session: Mutex::new(session),
        events,
    });
    state.sessions.write().expect("session table lock").insert(id, entry);
    tracing::info!(id, "session created");
    Ok((StatusCode::CREATED, Json(Created { id, snapshot })).into_response())
}

async fn get_state(State(state): State<AppState>, Path(id): Path<u64>) -> Result<Json<Snapshot>, ApiError> {
    let entry = state.entry(id)?;
    let snapshot = entry.session.lock().expect("session lock").snapshot();
    Ok(Json(snapshot))
}

async fn step(State(state): State<AppState>, Path(id): Path<u64>) -> Result<Json<Stepped>, ApiError> {
    let entry = state.entry(id)?;
    let stepped = with_session(entry, |s| {
        let events = s.step()?.to_vec();
        Ok(Stepped {
            events,
            snapshot: s.snapshot(),
        })
    })
    .await?;
    Ok(Json(stepped))
}

async fn correction(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Json(drag): Json<DragCorrection>,
) -> Result<Json<Corrected>, ApiError> {
    let entry = state.entry(id)?;
    let corrected = with_session(entry, move |s| {
        let cursor = s.events().len();
        let outcome = s.apply_drag(&drag)?;
        Ok(Corrected {
            outcome,
            events: s.events_since(cursor).to_vec(),
        })
    })
    .await?;
    Ok(Json(corrected))
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Query(q): Query<Since>,
) -> Result<Json<EventPage>, ApiError> {
    let entry = state.entry(id)?;
    let session = entry.session.lock().expect("session lock");
    Ok(Json(EventPage {
        events: session.events_since(q.since).to_vec(),
        cursor: session.events().len(),
    }))
}

async fn stream(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Query(q): Query<Since>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let entry = state.entry(id)?;
    Ok(ws.on_upgrade(move |socket| forward_events(socket, entry, q.since)))
}

async fn forward_events(mut socket: WebSocket, entry: Arc<Entry>, since: usize) {
    // Subscribe before reading the backlog so nothing falls in between;
    // duplicates are dropped by sequence number.
    let mut rx = entry.events.subscribe();
    let backlog = entry.session.lock().expect("session lock").events_since(since).to_vec();
    let mut next = since as u64;
    for e in backlog {
        next = e.seq + 1;
        if send(&mut socket, &e).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            received = rx.recv() => match received {
                Ok(e) if e.seq < next => {}
                Ok(e) => {
                    next = e.seq + 1;
                    if send(&mut socket, &e).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "stream subscriber lagged; client should poll /events");
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn send(socket: &mut WebSocket, event: &Event) -> Result<(), axum::Error> {
    let text = serde_json::to_string(event).expect("events serialise");
    socket.send(Message::Text(text.into())).await
}

pub async fn serve(bind: std::net::SocketAddr, config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(&config)).await
}
