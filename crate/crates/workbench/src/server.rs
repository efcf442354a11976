//! WebSocket transport. A single actor task owns the [`Workbench`]; every
//! connection forwards requests through one queue and reads scene
//! snapshots from a watch channel.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use serde_json::Value;
use tokio::sync::{mpsc, oneshot, watch};
use tower_http::services::ServeDir;

use crate::protocol::{negotiate, welcome, ApiError, Event, Hello, Request, Response};
use crate::workbench::Workbench;

/// Scene as of one revision.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub revision: u64,
    pub scene: Value,
}

struct Command {
    request: Request,
    reply: oneshot::Sender<Response>,
}

/// Handle to the running actor; cheap to clone.
#[derive(Clone)]
pub struct Service {
    commands: mpsc::Sender<Command>,
    snapshots: watch::Receiver<Arc<Snapshot>>,
}

impl Service {
    /// Moves `workbench` into a task that handles requests one at a time.
    pub fn spawn(mut workbench: Workbench) -> Self {
        let (commands, mut rx) = mpsc::channel::<Command>(256);
        let initial = Snapshot { revision: workbench.revision(), scene: workbench.scene() };
        let (publish, snapshots) = watch::channel(Arc::new(initial));
        tokio::spawn(async move {
            while let Some(Command { request, reply }) = rx.recv().await {
                let before = workbench.revision();
                let response = workbench.handle(&request);
                if workbench.revision() != before {
                    publish.send_replace(Arc::new(Snapshot { revision: workbench.revision(), scene: workbench.scene() }));
                }
                let _ = reply.send(response);
            }
        });
        Self { commands, snapshots }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshots.borrow().clone()
    }

    pub fn subscribe(&self) -> watch::Receiver<Arc<Snapshot>> {
        self.snapshots.clone()
    }

    /// Reads are answered from the latest snapshot; everything else goes
    /// through the actor queue.
    pub async fn call(&self, request: Request) -> Response {
        if request.verb == "get_scene" {
            let snap = self.snapshot();
            return Response::ok(&request, snap.revision, snap.scene.clone());
        }
        let (reply, rx) = oneshot::channel();
        let unavailable = |req: &Request| Response::err(req, 0, ApiError::new("Unavailable", "workbench stopped"));
        if self.commands.send(Command { request: request.clone(), reply }).await.is_err() {
            return unavailable(&request);
        }
        rx.await.unwrap_or_else(|_| unavailable(&request))
    }
}

pub fn router(service: Service, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new().route("/ws", get(upgrade)).with_state(service);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

/// Binds `addr`; returns the bound address and the server future.
pub async fn bind(
    addr: SocketAddr,
    app: Router,
) -> std::io::Result<(SocketAddr, impl std::future::Future<Output = std::io::Result<()>>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, serve(listener, app)))
}

async fn upgrade(ws: WebSocketUpgrade, State(service): State<Service>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, service))
}

fn text(value: &impl serde::Serialize) -> Message {
    Message::Text(serde_json::to_string(value).expect("message serializes").into())
}

fn protocol_error(id: u64, verb: &str, code: &str, message: impl Into<String>) -> Response {
    Response { id, verb: verb.into(), revision: 0, payload: None, error: Some(ApiError::new(code, message)) }
}

/// Reads the opening `hello`; `None` closes the connection.
async fn handshake(socket: &mut WebSocket) -> Option<()> {
    let Some(Ok(Message::Text(raw))) = socket.recv().await else { return None };
    let request: Request = match serde_json::from_str(&raw) {
        Ok(r) => r,
        Err(e) => {
            let _ = socket.send(text(&protocol_error(0, "", "InvalidMessage", e.to_string()))).await;
            return None;
        }
    };
    if request.verb != "hello" {
        let _ = socket.send(text(&protocol_error(request.id, &request.verb, "HelloRequired", "first message must be hello"))).await;
        return None;
    }
    let hello: Hello = match serde_json::from_value(request.payload.clone()) {
        Ok(h) => h,
        Err(e) => {
            let _ = socket.send(text(&protocol_error(request.id, "hello", "InvalidPayload", e.to_string()))).await;
            return None;
        }
    };
    let Some(version) = negotiate(&hello) else {
        let _ = socket
            .send(text(&protocol_error(request.id, "hello", "UnsupportedProtocol", format!("server speaks {:?}", [crate::protocol::PROTOCOL_VERSION]))))
            .await;
        return None;
    };
    let payload = serde_json::to_value(welcome(version)).expect("welcome serializes");
    socket.send(text(&Response::ok(&request, 0, payload))).await.ok()
}

async fn connection(mut socket: WebSocket, service: Service) {
    if handshake(&mut socket).await.is_none() {
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    let mut updates = service.subscribe();
    updates.mark_unchanged();
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let raw = match incoming {
                    Some(Ok(Message::Text(raw))) => raw,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let response = match serde_json::from_str::<Request>(&raw) {
                    Ok(request) => service.call(request).await,
                    Err(e) => protocol_error(0, "", "InvalidMessage", e.to_string()),
                };
                if socket.send(text(&response)).await.is_err() {
                    break;
                }
            }
            changed = updates.changed() => {
                if changed.is_err() {
                    break;
                }
                let snap = updates.borrow_and_update().clone();
                let event = Event { event: "scene".into(), revision: snap.revision, payload: snap.scene.clone() };
                if socket.send(text(&event)).await.is_err() {
                    break;
                }
            }
        }
    }
}
