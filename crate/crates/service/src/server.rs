use std::collections::BTreeMap;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tokio::net::TcpListener;
use tokio::sync::broadcast;
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::error::ServiceError;
use crate::schema::{
    ClientMessage, ClientPayload, CommandEdit, CreateSession, ServerMessage, ServerPayload,
    SessionInfo, SCHEMA_VERSION,
};
use crate::session::{Pacer, SessionCore, SessionDefaults};

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// A running session: its simulation core, its frame fan-out and its loop.
pub struct Session {
    core: Mutex<SessionCore>,
    frames: Mutex<Option<broadcast::Sender<Arc<str>>>>,
    task: Mutex<Option<JoinHandle<()>>>,
}

impl Session {
    pub fn info(&self) -> SessionInfo {
        lock(&self.core).info()
    }

    pub fn subscribe(&self) -> Option<broadcast::Receiver<Arc<str>>> {
        lock(&self.frames).as_ref().map(|tx| tx.subscribe())
    }

    pub fn command(
        &self,
        id: Option<u64>,
        edit: &CommandEdit,
    ) -> Result<ServerMessage, ServiceError> {
        let ack = lock(&self.core).apply(id, edit)?;
        Ok(ServerMessage::new(ServerPayload::Ack(ack)))
    }

    pub fn set_paused(&self, paused: bool) -> SessionInfo {
        let mut core = lock(&self.core);
        core.set_paused(paused);
        core.info()
    }

    pub fn log_csv(&self) -> String {
        lock(&self.core).log().to_csv_string()
    }

    fn close(&self) {
        lock(&self.frames).take();
        if let Some(h) = lock(&self.task).take() {
            h.abort();
        }
    }
}

struct Inner {
    defaults: SessionDefaults,
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(defaults: SessionDefaults) -> Self {
        Self {
            inner: Arc::new(Inner {
                defaults,
                sessions: Mutex::new(BTreeMap::new()),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    /// Builds a session and starts its loop; must run inside a Tokio runtime.
    pub fn create(&self, req: &CreateSession) -> Result<Arc<Session>, ServiceError> {
        let n = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
        let core = SessionCore::new(format!("s{n}"), req, &self.inner.defaults)?;
        let id = core.id().to_string();
        let (tx, _) = broadcast::channel(self.inner.defaults.service.queue);
        let session = Arc::new(Session {
            core: Mutex::new(core),
            frames: Mutex::new(Some(tx.clone())),
            task: Mutex::new(None),
        });
        let cap = self.inner.defaults.service.max_steps_per_tick;
        let handle = tokio::spawn(run_loop(session.clone(), tx, cap));
        *lock(&session.task) = Some(handle);
        lock(&self.inner.sessions).insert(id, session.clone());
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        lock(&self.inner.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn list(&self) -> Vec<SessionInfo> {
        let sessions: Vec<_> = lock(&self.inner.sessions).values().cloned().collect();
        sessions.iter().map(|s| s.info()).collect()
    }

    pub fn delete(&self, id: &str) -> Result<(), ServiceError> {
        let s = lock(&self.inner.sessions)
            .remove(id)
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        s.close();
        Ok(())
    }

    pub fn close_all(&self) {
        let all: Vec<_> = std::mem::take(&mut *lock(&self.inner.sessions))
            .into_values()
            .collect();
        for s in all {
            s.close();
        }
    }
}

/// Steps the simulation in wall-clock time and publishes one frame per tick.
/// Sending never waits for subscribers.
async fn run_loop(session: Arc<Session>, tx: broadcast::Sender<Arc<str>>, cap: usize) {
    let hz = lock(&session.core).stream_hz();
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / hz));
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut pacer = Pacer::default();
    let mut last = Instant::now();
    loop {
        interval.tick().await;
        let now = Instant::now();
        let wall = now.duration_since(last).as_secs_f64();
        last = now;
        let text = {
            let mut core = lock(&session.core);
            if core.is_live() {
                let n = pacer.due(wall, core.time_scale(), cap);
                core.advance(n);
            } else {
                pacer.clear();
            }
            let frame = ServerMessage::new(ServerPayload::Frame(core.frame()));
            serde_json::to_string(&frame).expect("frame serializes")
        };
        // no subscribers is fine
        let _ = tx.send(text.into());
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body)
        .map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

async fn create_session(
    State(app): State<AppState>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let req: CreateSession = parse(&body)?;
    let s = app.create(&req)?;
    Ok((StatusCode::CREATED, Json(s.info())).into_response())
}

async fn list_sessions(State(app): State<AppState>) -> Json<Vec<SessionInfo>> {
    Json(app.list())
}

async fn get_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionInfo>, ServiceError> {
    Ok(Json(app.get(&id)?.info()))
}

async fn delete_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<StatusCode, ServiceError> {
    app.delete(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn command(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ServerMessage>, ServiceError> {
    let edit: CommandEdit = parse(&body)?;
    Ok(Json(app.get(&id)?.command(None, &edit)?))
}

async fn pause(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionInfo>, ServiceError> {
    Ok(Json(app.get(&id)?.set_paused(true)))
}

async fn resume(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionInfo>, ServiceError> {
    Ok(Json(app.get(&id)?.set_paused(false)))
}

async fn log(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    let csv = app.get(&id)?.log_csv();
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": SCHEMA_VERSION }))
}

async fn stream(
    ws: WebSocketUpgrade,
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    let session = app.get(&id)?;
    let rx = session
        .subscribe()
        .ok_or_else(|| ServiceError::NotFound(id))?;
    Ok(ws.on_upgrade(move |socket| subscriber(socket, session, rx)))
}

fn client_reply(session: &Session, text: &str) -> ServerMessage {
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return ServerMessage::error(None, format!("invalid message: {e}")),
    };
    if msg.version != SCHEMA_VERSION {
        return ServerMessage::error(None, format!("unsupported schema version {}", msg.version));
    }
    let (id, result) = match msg.payload {
        ClientPayload::Command { id, edit } => (id, session.command(id, &edit)),
        ClientPayload::Pause { id } => (id, Ok(hello(session.set_paused(true)))),
        ClientPayload::Resume { id } => (id, Ok(hello(session.set_paused(false)))),
    };
    result.unwrap_or_else(|e| ServerMessage::error(id, e.to_string()))
}

fn hello(info: SessionInfo) -> ServerMessage {
    ServerMessage::new(ServerPayload::Hello { session: info })
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("message serializes");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn subscriber(
    mut socket: WebSocket,
    session: Arc<Session>,
    mut rx: broadcast::Receiver<Arc<str>>,
) {
    if !send(&mut socket, &hello(session.info())).await {
        return;
    }
    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Ok(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                // the receiver already skipped past the dropped frames
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(t))) => {
                    let reply = client_reply(&session, t.as_str());
                    if !send(&mut socket, &reply).await {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/stream", get(stream))
        .route("/sessions/{id}/command", post(command))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/resume", post(resume))
        .route("/sessions/{id}/log", get(log))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then closes every session.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            state.close_all();
        })
        .await
}
