//! HTTP and WebSocket front of the cloud agent.
//!
//! | route              | method | body                         | reply                         |
//! |--------------------|--------|------------------------------|-------------------------------|
//! | `/status`          | GET    |                              | `status v=1 ...` record       |
//! | `/waypoint`        | POST   | `x y z yaw`                  | `ok ...` / `err ...`          |
//! | `/netprofile`      | POST   | `delay_ms jitter_ms loss`    | `ok ...` / `err ...`          |
//! | `/command`         | POST   | any command line             | response line                 |
//! | `/stream`          | GET    | WebSocket upgrade            | telemetry records, replies    |
//!
//! Malformed commands answer 400, commands the agent refuses answer 422 and
//! an agent that does not answer in time gives 503.
//!
//! The stream sends at most one message per [`FRAME_INTERVAL`]. By default a
//! message is the newest `telemetry` record; with `?batch=1` it carries every
//! record since the previous message, one per line, so a recorder sees each
//! control cycle. Text sent by the client is read as command lines and each
//! is answered on the same socket with its response line.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::Router;
use cloudbed_core::bus::Bus;
use cloudbed_core::cloud_agent::AgentHandle;
use cloudbed_core::protocol::{Command, Response, TelemetryFrame};
use futures::{SinkExt, StreamExt};
use tokio::sync::watch;

/// Minimum spacing of stream messages (30 Hz).
pub const FRAME_INTERVAL: Duration = Duration::from_micros(33_334);

const REQUEST_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Clone)]
pub struct Gateway {
    handle: AgentHandle,
    bus: Arc<Bus<TelemetryFrame>>,
    shutdown: watch::Receiver<bool>,
}

impl Gateway {
    /// `shutdown` flipping to `true` closes open streams.
    pub fn new(handle: AgentHandle, bus: Arc<Bus<TelemetryFrame>>, shutdown: watch::Receiver<bool>) -> Self {
        Self { handle, bus, shutdown }
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/status", get(status))
            .route("/waypoint", post(waypoint))
            .route("/netprofile", post(netprofile))
            .route("/command", post(command))
            .route("/stream", get(stream))
            .with_state(self)
    }

    /// Serves until the shutdown signal given to [`Gateway::new`] fires.
    pub async fn serve(self, listener: tokio::net::TcpListener) -> std::io::Result<()> {
        let mut stop = self.shutdown.clone();
        axum::serve(listener, self.router())
            .with_graceful_shutdown(async move { stopped(&mut stop).await })
            .await
    }

    async fn run_line(&self, line: &str) -> (StatusCode, String) {
        let cmd = match Command::parse(line) {
            Ok(c) => c,
            Err(e) => return (StatusCode::BAD_REQUEST, Response::Error(e.to_string()).to_line()),
        };
        let handle = self.handle.clone();
        let response = tokio::task::spawn_blocking(move || handle.request(cmd, REQUEST_TIMEOUT))
            .await
            .unwrap_or_else(|e| Response::Error(e.to_string()));
        let code = match &response {
            Response::Error(m) if m.starts_with("agent ") => StatusCode::SERVICE_UNAVAILABLE,
            Response::Error(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::OK,
        };
        (code, response.to_line())
    }
}

fn reply((code, line): (StatusCode, String)) -> impl IntoResponse {
    (code, format!("{line}\n"))
}

async fn status(State(g): State<Gateway>) -> impl IntoResponse {
    reply(g.run_line("status").await)
}

async fn waypoint(State(g): State<Gateway>, body: String) -> impl IntoResponse {
    reply(g.run_line(&format!("waypoint {}", body.trim())).await)
}

async fn netprofile(State(g): State<Gateway>, body: String) -> impl IntoResponse {
    reply(g.run_line(&format!("netprofile {}", body.trim())).await)
}

async fn command(State(g): State<Gateway>, body: String) -> impl IntoResponse {
    reply(g.run_line(body.trim()).await)
}

async fn stream(
    ws: WebSocketUpgrade,
    Query(q): Query<HashMap<String, String>>,
    State(g): State<Gateway>,
) -> impl IntoResponse {
    let batch = q.get("batch").is_some_and(|v| v == "1" || v == "true");
    ws.on_upgrade(move |socket| session(socket, g, batch))
}

async fn session(socket: WebSocket, g: Gateway, batch: bool) {
    let sub = g.bus.subscribe();
    let (mut tx, mut rx) = socket.split();
    let mut tick = tokio::time::interval(FRAME_INTERVAL);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut stop = g.shutdown.clone();
    loop {
        tokio::select! {
            _ = stopped(&mut stop) => break,
            _ = tick.tick() => {
                let frames = sub.drain();
                let text = match (batch, frames.last()) {
                    (_, None) => continue,
                    (false, Some(last)) => last.to_record(),
                    (true, Some(_)) => frames.iter().map(TelemetryFrame::to_record).collect::<Vec<_>>().join("\n"),
                };
                if tx.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                        let (_, answer) = g.run_line(line).await;
                        if tx.send(Message::Text(answer.into())).await.is_err() {
                            return;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            }
        }
    }
    let _ = tx.send(Message::Close(None)).await;
}

/// Resolves once the flag is set or its sender is gone.
async fn stopped(rx: &mut watch::Receiver<bool>) {
    while !*rx.borrow_and_update() {
        if rx.changed().await.is_err() {
            return;
        }
    }
}
