//! HTTP and WebSocket front of interactive drive sessions.
//!
//! Routes are listed in `router`; message schemas live in `api`.

mod actor;
pub mod api;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::broadcast::error::RecvError;

use drivelm_core::agent::Backend;
use drivelm_core::memory::{MemoryStore, UserProfile};
use drivelm_core::scenario::{generate_scenario, Category};
use drivelm_core::session::{Session, SessionConfig, SessionFrame, SessionReport};

pub use actor::SessionHandle;
use actor::Msg;
use api::*;

/// Service settings.
#[derive(Clone, Default)]
pub struct ServiceConfig {
    pub session: SessionConfig,
    /// Wall-clock time between ticks; `None` steps only on request.
    pub pacing: Option<Duration>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    sessions: Mutex<HashMap<String, SessionHandle>>,
    memory: Arc<Mutex<MemoryStore>>,
    backend: Arc<dyn Backend>,
    config: ServiceConfig,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(backend: Arc<dyn Backend>, memory: MemoryStore, config: ServiceConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                sessions: Mutex::new(HashMap::new()),
                memory: Arc::new(Mutex::new(memory)),
                backend,
                config,
                next_id: AtomicU64::new(1),
            }),
        }
    }

    pub fn memory(&self) -> Arc<Mutex<MemoryStore>> {
        self.inner.memory.clone()
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.inner
            .sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session '{id}'")))
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn bad(e: String) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, e)
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/stream", get(stream))
        .route("/v1/sessions/{id}/step", post(step))
        .route("/v1/sessions/{id}/command", post(command))
        .route("/v1/sessions/{id}/takeover", post(takeover))
        .route("/v1/sessions/{id}/release", post(release))
        .route("/v1/sessions/{id}/manual_speed", post(manual_speed))
        .route("/v1/sessions/{id}/feedback", post(feedback))
        .route("/v1/sessions/{id}/report", get(report))
        .route("/v1/sessions/{id}/finish", post(finish))
        .route("/v1/users/{user}/memory", get(memory_profile))
        .with_state(state)
}

/// Binds and serves until the process ends.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health { version: API_VERSION.into(), backend: s.inner.backend.id() })
}

async fn create_session(State(s): State<AppState>, Json(body): Json<CreateSession>) -> ApiResult<SessionCreated> {
    if body.user.trim().is_empty() {
        return Err(bad("user must not be empty".into()));
    }
    let scenario = match body.scenario {
        Some(sc) => sc,
        None => generate_scenario(body.seed.unwrap_or(0), 0, body.category.unwrap_or(Category::Speed))
            .map_err(|e| bad(e.to_string()))?,
    };
    let id = format!("session-{}", s.inner.next_id.fetch_add(1, Ordering::Relaxed));
    let session = Session::new(id.clone(), body.user, scenario.clone(), s.inner.config.session.clone())
        .map_err(|e| bad(e.to_string()))?;
    let frame = session.frame();
    let handle = actor::spawn(session, s.inner.memory.clone(), s.inner.backend.clone(), s.inner.config.pacing);
    s.inner.sessions.lock().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), handle);
    Ok(Json(SessionCreated { id, scenario, frame }))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionState> {
    let h = s.session(&id)?;
    h.call(|reply| Msg::State { reply }).await.map(Json).map_err(bad)
}

async fn step(State(s): State<AppState>, Path(id): Path<String>, body: Option<Json<StepBody>>) -> ApiResult<SessionFrame> {
    let ticks = body.map_or(1, |b| b.ticks);
    let h = s.session(&id)?;
    h.call(|reply| Msg::Step { ticks, reply }).await.map(Json).map_err(bad)
}

async fn command(State(s): State<AppState>, Path(id): Path<String>, Json(b): Json<CommandBody>) -> ApiResult<CommandReply> {
    let h = s.session(&id)?;
    h.call(|reply| Msg::Command { text: b.text, reply }).await.map(Json).map_err(bad)
}

async fn takeover(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<ModeReply> {
    let h = s.session(&id)?;
    h.call(|reply| Msg::Takeover { reply }).await.map(Json).map_err(bad)
}

async fn release(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<ModeReply> {
    let h = s.session(&id)?;
    h.call(|reply| Msg::Release { reply }).await.map(Json).map_err(bad)
}

async fn manual_speed(State(s): State<AppState>, Path(id): Path<String>, Json(b): Json<SpeedBody>) -> ApiResult<ModeReply> {
    let h = s.session(&id)?;
    h.call(|reply| Msg::ManualSpeed { speed: b.speed, reply }).await.map(Json).map_err(bad)
}

async fn feedback(State(s): State<AppState>, Path(id): Path<String>, Json(b): Json<FeedbackBody>) -> ApiResult<FeedbackReply> {
    let h = s.session(&id)?;
    h.call(|reply| Msg::Feedback { text: b.text, reply }).await.map(Json).map_err(bad)
}

async fn report(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionReport> {
    let h = s.session(&id)?;
    h.call(|reply| Msg::Report { reply }).await.map(Json).map_err(bad)
}

async fn finish(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionReport> {
    let h = s.session(&id)?;
    h.call(|reply| Msg::Finish { reply }).await.map(Json).map_err(bad)
}

async fn memory_profile(State(s): State<AppState>, Path(user): Path<String>) -> Json<UserProfile> {
    let memory = s.inner.memory.lock().unwrap_or_else(|e| e.into_inner());
    Json(memory.profile(&user).cloned().unwrap_or_else(|| UserProfile::new(user)))
}

async fn stream(State(s): State<AppState>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    let h = s.session(&id)?;
    Ok(ws.on_upgrade(move |socket| pump(socket, h)))
}

fn text(msg: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(msg).expect("message serializes").into())
}

async fn answer(h: &SessionHandle, msg: ClientMessage) -> ServerMessage {
    let out = match msg {
        ClientMessage::Command { text } => {
            h.call(|reply| Msg::Command { text, reply }).await.map(|reply| ServerMessage::Command { reply })
        }
        ClientMessage::Takeover => h.call(|reply| Msg::Takeover { reply }).await.map(|reply| ServerMessage::Mode { reply }),
        ClientMessage::Release => h.call(|reply| Msg::Release { reply }).await.map(|reply| ServerMessage::Mode { reply }),
        ClientMessage::ManualSpeed { speed } => {
            h.call(|reply| Msg::ManualSpeed { speed, reply }).await.map(|reply| ServerMessage::Mode { reply })
        }
        ClientMessage::Feedback { text } => {
            h.call(|reply| Msg::Feedback { text, reply }).await.map(|reply| ServerMessage::Feedback { reply })
        }
        // frames of the stepped ticks arrive through the subscription
        ClientMessage::Step { ticks } => h.call(|reply| Msg::Step { ticks, reply }).await.map(|frame| ServerMessage::Frame { frame: Box::new(frame) }),
        ClientMessage::State => {
            h.call(|reply| Msg::State { reply }).await.map(|state| ServerMessage::State { state: Box::new(state) })
        }
        ClientMessage::Report => {
            h.call(|reply| Msg::Report { reply }).await.map(|report| ServerMessage::Report { report: Box::new(report) })
        }
        ClientMessage::Finish => {
            h.call(|reply| Msg::Finish { reply }).await.map(|report| ServerMessage::Report { report: Box::new(report) })
        }
    };
    out.unwrap_or_else(|error| ServerMessage::Error { error })
}

/// Sends every frame of the session and answers client messages in order.
async fn pump(mut socket: WebSocket, h: SessionHandle) {
    let mut frames = h.subscribe();
    loop {
        tokio::select! {
            f = frames.recv() => match f {
                Ok(frame) => {
                    if socket.send(text(&ServerMessage::Frame { frame: Box::new(frame) })).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Lagged(n)) => {
                    let msg = ServerMessage::Error { error: format!("stream lagged; {n} frames dropped") };
                    if socket.send(text(&msg)).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Closed) => return,
            },
            m = socket.recv() => match m {
                Some(Ok(Message::Text(t))) => {
                    let reply = match serde_json::from_str::<ClientMessage>(&t) {
                        Ok(msg) => {
                            if matches!(msg, ClientMessage::Step { .. }) {
                                // step replies are redundant with the streamed frames
                                let _ = answer(&h, msg).await;
                                continue;
                            }
                            answer(&h, msg).await
                        }
                        Err(e) => ServerMessage::Error { error: format!("bad message: {e}") },
                    };
                    if socket.send(text(&reply)).await.is_err() {
                        return;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            }
        }
    }
}
