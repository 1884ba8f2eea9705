//! WebSocket control endpoint and static file serving.
//!
//! Clients send one JSON object per text message:
//! `set_latent {values}`, `set_chroma {class}` (0-11 or null),
//! `set_gain {value}` and `get_status`. The server answers malformed or
//! invalid messages with `{"type":"error","message":...}` and leaves the
//! state unchanged. Every session receives a status message on a fixed
//! interval and in reply to `get_status`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use super::engine::StreamStats;
use super::state::{validate_gain, validate_latent, ControlState, SnapshotWriter};
use crate::chroma::PitchClass;
use crate::model::Autoencoder;
use crate::{Error, Result};

/// Shortest allowed status interval (20 Hz).
pub const MIN_STATUS_INTERVAL: Duration = Duration::from_millis(50);
pub const DEFAULT_STATUS_INTERVAL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SetLatent { values: Vec<f32> },
    SetChroma { class: Option<u8> },
    SetGain { value: f32 },
    GetStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub bottleneck: usize,
    pub skip: bool,
    /// Slider range per latent dimension.
    pub bounds: Vec<(f32, f32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub latent: Vec<f32>,
    pub chroma: Option<u8>,
    pub gain: f32,
    pub generation: u64,
    pub underruns: u64,
    pub clipped: u64,
    pub spectrum: Vec<f32>,
    pub model: ModelDescriptor,
    /// Phase bank seed.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Status(Status),
    Error { message: String },
}

/// Owns the authoritative control state and publishes every accepted
/// update to the render thread as one snapshot.
pub struct ControlHub {
    model: Arc<Autoencoder>,
    descriptor: ModelDescriptor,
    inner: Mutex<(ControlState, SnapshotWriter)>,
    stats: Arc<StreamStats>,
    seed: u64,
}

impl ControlHub {
    pub fn new(model: Arc<Autoencoder>, initial: ControlState, writer: SnapshotWriter, stats: Arc<StreamStats>, seed: u64) -> Self {
        let descriptor = ModelDescriptor {
            bottleneck: model.bottleneck_width(),
            skip: model.config().chroma_skip,
            bounds: model.latent_ranges(),
        };
        Self { model, descriptor, inner: Mutex::new((initial, writer)), stats, seed }
    }

    pub fn state(&self) -> ControlState {
        self.inner.lock().expect("control lock").0.clone()
    }

    /// Validates `msg` against the current state and publishes the result.
    /// `get_status` changes nothing.
    pub fn apply(&self, msg: &ClientMessage) -> Result<ControlState> {
        let mut guard = self.inner.lock().expect("control lock");
        let (state, writer) = &mut *guard;
        let mut next = state.clone();
        match msg {
            ClientMessage::SetLatent { values } => {
                validate_latent(&self.model, values).map_err(|e| match e {
                    Error::Shape(_) => Error::Shape(format!(
                        "set_latent expects {} values (bottleneck width), got {}",
                        self.descriptor.bottleneck,
                        values.len()
                    )),
                    e => e,
                })?;
                next.latent.clone_from(values);
            }
            ClientMessage::SetChroma { class } => {
                next.chroma = class.map(PitchClass::try_from).transpose()?;
            }
            ClientMessage::SetGain { value } => {
                validate_gain(*value)?;
                next.gain = *value;
            }
            ClientMessage::GetStatus => return Ok(next),
        }
        next.generation += 1;
        writer.publish(&next);
        *state = next.clone();
        Ok(next)
    }

    pub fn status(&self) -> Status {
        let state = self.state();
        let stats = self.stats.snapshot();
        Status {
            latent: state.latent,
            chroma: state.chroma.map(|c| c.index() as u8),
            gain: state.gain,
            generation: state.generation,
            underruns: stats.underruns,
            clipped: stats.clipped,
            spectrum: stats.spectrum,
            model: self.descriptor.clone(),
            seed: self.seed,
        }
    }

    /// Handles one text message and returns the reply, if any.
    pub fn handle_text(&self, text: &str) -> Option<ServerMessage> {
        let msg: ClientMessage = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return Some(ServerMessage::Error { message: format!("malformed message: {e}") }),
        };
        match self.apply(&msg) {
            Ok(_) if msg == ClientMessage::GetStatus => Some(ServerMessage::Status(self.status())),
            Ok(_) => None,
            Err(e) => Some(ServerMessage::Error { message: e.to_string() }),
        }
    }
}

#[derive(Clone)]
struct AppState {
    hub: Arc<ControlHub>,
    interval: Duration,
}

const PLACEHOLDER: &str = "<!doctype html>\n<title>timbrelab</title>\n<p>timbrelab synth engine. Control WebSocket at <code>/ws</code>; start with <code>--ui-dir</code> to serve a control panel here.</p>\n";

/// `/ws` plus static files from `ui_dir` (or a placeholder page at `/`).
pub fn router(hub: Arc<ControlHub>, ui_dir: Option<PathBuf>, status_interval: Duration) -> Router {
    let state = AppState { hub, interval: status_interval.max(MIN_STATUS_INTERVAL) };
    let app = Router::new().route("/ws", get(ws_handler));
    let app = match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER) })),
    };
    app.with_state(state)
}

async fn ws_handler(ws: WebSocketUpgrade, State(app): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session(socket, app))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn session(mut socket: WebSocket, app: AppState) {
    let mut tick = tokio::time::interval(app.interval);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        tokio::select! {
            _ = tick.tick() => {
                if !send(&mut socket, &ServerMessage::Status(app.hub.status())).await {
                    break;
                }
            }
            msg = socket.recv() => {
                let reply = match msg {
                    Some(Ok(Message::Text(t))) => app.hub.handle_text(t.as_str()),
                    Some(Ok(Message::Binary(_))) => {
                        Some(ServerMessage::Error { message: "binary messages are not supported".into() })
                    }
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                    Some(Ok(_)) => None,
                };
                if let Some(r) = reply {
                    if !send(&mut socket, &r).await {
                        break;
                    }
                }
            }
        }
    }
}

/// Serves `router` on `addr` until `shutdown` resolves. `ready` receives
/// the bound address.
pub async fn serve_control(
    hub: Arc<ControlHub>,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
    ready: impl FnOnce(SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Device(format!("cannot bind control port {addr}: {e}")))?;
    ready(listener.local_addr()?);
    axum::serve(listener, router(hub, ui_dir, DEFAULT_STATUS_INTERVAL)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
