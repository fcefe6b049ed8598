//! Network layer: WebSocket and health endpoints around one session task.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch, Notify};
use tokio::time::MissedTickBehavior;

use opswitch_core::gridnav::EnvConfig;

use crate::protocol::{Outbound, StateFrame};
use crate::session::Session;

pub const DEFAULT_TICK_PERIOD: Duration = Duration::from_millis(100);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub tick_period: Duration,
    /// Session logs are written here when the session ends.
    pub log_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            tick_period: DEFAULT_TICK_PERIOD,
            log_dir: None,
        }
    }
}

enum Event {
    Tick,
    Text {
        text: String,
        reply: mpsc::UnboundedSender<Outbound>,
    },
    Shutdown,
}

#[derive(Clone)]
struct AppState {
    events: mpsc::UnboundedSender<Event>,
    frames: broadcast::Sender<Arc<StateFrame>>,
    start: Arc<Notify>,
    map: Arc<EnvConfig>,
}

/// A running server. The session lives on its own task until it ends.
pub struct Running {
    pub addr: SocketAddr,
    events: mpsc::UnboundedSender<Event>,
    ended: watch::Receiver<bool>,
    session: tokio::task::JoinHandle<Session>,
}

impl Running {
    /// Resolve once the session has ended and its logs are written.
    pub async fn ended(&mut self) {
        let _ = self.ended.wait_for(|e| *e).await;
    }

    /// End the session without logging an `end` message, then return it.
    pub async fn shutdown(self) -> Session {
        let _ = self.events.send(Event::Shutdown);
        self.session.await.expect("session task panicked")
    }
}

pub async fn spawn(listener: TcpListener, session: Session, cfg: ServerConfig) -> std::io::Result<Running> {
    let addr = listener.local_addr()?;
    let (events, rx) = mpsc::unbounded_channel();
    let (frames, _) = broadcast::channel(1024);
    let (ended_tx, ended) = watch::channel(false);
    let stop = Arc::new(AtomicBool::new(false));
    let state = AppState {
        events: events.clone(),
        frames: frames.clone(),
        start: Arc::new(Notify::new()),
        map: Arc::new(session.setup().env.clone()),
    };
    tokio::spawn(ticker(
        events.clone(),
        state.start.clone(),
        stop.clone(),
        cfg.tick_period,
    ));
    let session = tokio::spawn(run_session(session, rx, frames, cfg.log_dir, stop, ended_tx));
    let app = Router::new()
        .route("/healthz", get(|| async { StatusCode::OK }))
        .route("/", get(ws_upgrade))
        .route("/ws", get(ws_upgrade))
        .with_state(state);
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(Running {
        addr,
        events,
        ended,
        session,
    })
}

async fn ticker(events: mpsc::UnboundedSender<Event>, start: Arc<Notify>, stop: Arc<AtomicBool>, period: Duration) {
    start.notified().await;
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    while !stop.load(Ordering::Acquire) {
        interval.tick().await;
        if events.send(Event::Tick).is_err() {
            break;
        }
    }
}

async fn run_session(
    mut session: Session,
    mut rx: mpsc::UnboundedReceiver<Event>,
    frames: broadcast::Sender<Arc<StateFrame>>,
    log_dir: Option<PathBuf>,
    stop: Arc<AtomicBool>,
    ended: watch::Sender<bool>,
) -> Session {
    let mut finished = false;
    while let Some(event) = rx.recv().await {
        match event {
            Event::Tick => {
                if session.is_ended() {
                    continue;
                }
                match session.tick() {
                    Ok(frame) => {
                        let _ = frames.send(Arc::new(frame));
                    }
                    Err(e) => tracing::error!("tick failed: {e}"),
                }
            }
            Event::Text { text, reply } => {
                if let Err(code) = session.handle_text(&text) {
                    let _ = reply.send(Outbound::Error { code });
                }
            }
            Event::Shutdown => {
                if !finished {
                    finish(&session, log_dir.as_ref(), &stop, &ended);
                }
                break;
            }
        }
        if session.is_ended() && !finished {
            finish(&session, log_dir.as_ref(), &stop, &ended);
            finished = true;
        }
    }
    session
}

fn finish(session: &Session, log_dir: Option<&PathBuf>, stop: &AtomicBool, ended: &watch::Sender<bool>) {
    stop.store(true, Ordering::Release);
    if let Some(dir) = log_dir {
        match session.write_logs(dir) {
            Ok(()) => tracing::info!("session logs written to {}", dir.display()),
            Err(e) => tracing::error!("writing session logs failed: {e}"),
        }
    }
    let _ = ended.send(true);
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(mut socket: WebSocket, state: AppState) {
    let mut frames = state.frames.subscribe();
    let (reply_tx, mut replies) = mpsc::unbounded_channel();
    state.start.notify_one();
    let mut map_sent = false;
    loop {
        tokio::select! {
            inbound = socket.recv() => {
                let text = match inbound {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Binary(_))) => String::new(),
                    Some(Ok(_)) => continue,
                    Some(Err(_)) | None => break,
                };
                let event = Event::Text { text, reply: reply_tx.clone() };
                if state.events.send(event).is_err() {
                    break;
                }
            }
            frame = frames.recv() => {
                let mut frame = match frame {
                    Ok(f) => (*f).clone(),
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                };
                if !map_sent {
                    frame.map = Some((*state.map).clone());
                    map_sent = true;
                }
                if socket.send(Message::Text(Outbound::State(frame).to_json().into())).await.is_err() {
                    break;
                }
            }
            Some(reply) = replies.recv() => {
                if socket.send(Message::Text(reply.to_json().into())).await.is_err() {
                    break;
                }
            }
        }
    }
}
