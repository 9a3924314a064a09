//! `/stream/{session_id}`. The first INIT or FRAME makes a connection the
//! session's producer; any other connection is a viewer that receives the
//! session's output envelopes and may send CONTROL.

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc};

use areval_core::model::validate_manifest;
use areval_core::pipeline::{store_error_code, PipelineError};
use areval_core::wire::{frame_from_envelope, manifest_from_init, ControlCommand, Envelope, MessageType};

use crate::runtime::SessionRuntime;
use crate::AppState;

const OUTBOX: usize = 256;

pub fn routes() -> Router<Arc<AppState>> {
    Router::new().route("/stream/{id}", get(upgrade))
}

async fn upgrade(ws: WebSocketUpgrade, Path(id): Path<String>, State(app): State<Arc<AppState>>) -> Response {
    ws.max_message_size(256 << 20).on_upgrade(move |socket| connection(app, id, socket))
}

/// Applies a CONTROL command and returns the ACK header.
pub(crate) fn apply_control(app: &Arc<AppState>, runtime: &SessionRuntime, cmd: ControlCommand) -> Result<Value, PipelineError> {
    let mut ack = json!({ "session_id": runtime.session_id });
    match &cmd {
        ControlCommand::ReplaySeek { frame_index, .. } => {
            runtime.seek(app, *frame_index)?;
            ack["frame_index"] = json!(frame_index);
        }
        ControlCommand::ReplayMode { mode, fps, .. } => runtime.replay_mode(app, *mode, *fps)?,
        _ => runtime.control(cmd.clone())?,
    }
    let name = serde_json::to_value(&cmd).map_err(|e| PipelineError::InvalidControl(e.to_string()))?;
    ack["command"] = name["command"].clone();
    Ok(ack)
}

#[derive(PartialEq)]
enum Role {
    Undecided,
    Producer,
    Viewer,
}

struct Conn {
    app: Arc<AppState>,
    session_id: String,
    out: mpsc::Sender<Vec<u8>>,
    role: Role,
    runtime: Option<Arc<SessionRuntime>>,
    forward: Option<tokio::task::JoinHandle<()>>,
}

fn encoded(env: &Envelope) -> Vec<u8> {
    env.encode().unwrap_or_else(|e| {
        log::error!("cannot encode reply: {e}");
        Envelope::error("EncodingFailure", e.to_string()).encode().expect("error envelope encodes")
    })
}

fn error_env(code: &str, message: impl Into<String>, session_id: &str) -> Envelope {
    let mut e = Envelope::error(code, message);
    e.header["session_id"] = json!(session_id);
    e
}

impl Conn {
    async fn send(&self, env: Envelope) {
        let _ = self.out.send(encoded(&env)).await;
    }

    async fn fail(&self, code: &str, message: impl Into<String>) {
        self.send(error_env(code, message, &self.session_id)).await;
    }

    fn subscribe(&mut self, runtime: &SessionRuntime) {
        if self.forward.is_some() {
            return;
        }
        let mut rx = runtime.subscribe();
        let out = self.out.clone();
        self.forward = Some(tokio::spawn(async move {
            loop {
                match rx.recv().await {
                    Ok(bytes) => {
                        if out.send(bytes.as_ref().clone()).await.is_err() {
                            break;
                        }
                    }
                    // a slow viewer loses envelopes instead of stalling others
                    Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("viewer lagged by {n} envelopes"),
                    Err(broadcast::error::RecvError::Closed) => break,
                }
            }
        }));
    }

    fn unsubscribe(&mut self) {
        if let Some(f) = self.forward.take() {
            f.abort();
        }
    }

    async fn on_init(&mut self, env: &Envelope) {
        if self.role != Role::Undecided {
            return self.fail("ProtocolError", "INIT must be the first message of a producer").await;
        }
        let m = match manifest_from_init(env) {
            Ok(m) => m,
            Err(e) => return self.fail("InvalidManifest", e.to_string()).await,
        };
        if m.session_id != self.session_id {
            return self
                .fail("InvalidManifest", format!("session_id {:?} does not match stream path {:?}", m.session_id, self.session_id))
                .await;
        }
        if let Err(v) = validate_manifest(&m) {
            return self.fail("InvalidManifest", format!("{}: {}", v.field, v.message)).await;
        }
        let handle = match self.app.store.begin_session(&m) {
            Ok(h) => h,
            Err(e) => return self.fail(store_error_code(&e), e.to_string()).await,
        };
        self.become_producer(handle).await;
        if self.role == Role::Producer {
            self.send(Envelope::ack(json!({ "session_id": self.session_id }))).await;
        }
    }

    async fn become_producer(&mut self, handle: areval_core::store::SessionHandle) {
        let runtime = match self.app.runtime(&self.session_id) {
            Ok(r) => r,
            Err(e) => return self.fail(store_error_code(&e), e.to_string()).await,
        };
        if runtime.is_live().await {
            return self.fail("ProtocolError", "another connection is producing this session").await;
        }
        if let Err(e) = runtime.start_live(&self.app, handle).await {
            return self.fail(e.code(), e.to_string()).await;
        }
        self.unsubscribe();
        self.runtime = Some(runtime);
        self.role = Role::Producer;
    }

    async fn on_frame(&mut self, env: &Envelope) {
        if self.role == Role::Viewer {
            return self.fail("ProtocolError", "viewers cannot send FRAME").await;
        }
        if self.role == Role::Undecided {
            // resume an existing session
            let handle = match self.app.store.open_session(&self.session_id) {
                Ok(h) => h,
                Err(e) => return self.fail(store_error_code(&e), e.to_string()).await,
            };
            self.become_producer(handle).await;
            if self.role != Role::Producer {
                return;
            }
        }
        let runtime = self.runtime.clone().expect("producer has a runtime");
        let frame = match frame_from_envelope(env, runtime.manifest()) {
            Ok(f) => f,
            Err(e) => return self.fail(e.code(), e.to_string()).await,
        };
        let index = frame.index;
        match runtime.ingest(frame).await {
            Ok(()) => {
                self.send(Envelope::ack(json!({ "session_id": self.session_id, "frame_index": index })))
                    .await
            }
            Err(e) => {
                let mut env = error_env(e.code(), e.to_string(), &self.session_id);
                env.header["frame_index"] = json!(index);
                self.send(env).await
            }
        }
    }

    async fn on_end(&mut self) {
        if let (Role::Producer, Some(r)) = (&self.role, self.runtime.take()) {
            r.finish_live().await;
        }
        self.role = Role::Undecided;
        self.send(Envelope::end()).await;
    }

    async fn on_control(&mut self, env: &Envelope) {
        let cmd = match ControlCommand::from_envelope(env) {
            Ok(c) => c,
            Err(e) => return self.fail("InvalidControl", e.to_string()).await,
        };
        if cmd.session_id() != self.session_id {
            return self
                .fail("InvalidControl", format!("command addresses session {:?}, stream is {:?}", cmd.session_id(), self.session_id))
                .await;
        }
        let runtime = match self.app.runtime(&self.session_id) {
            Ok(r) => r,
            Err(e) => return self.fail(store_error_code(&e), e.to_string()).await,
        };
        if self.role == Role::Undecided {
            self.subscribe(&runtime);
            self.role = Role::Viewer;
        }
        let app = self.app.clone();
        let result = tokio::task::spawn_blocking(move || apply_control(&app, &runtime, cmd)).await;
        match result {
            Ok(Ok(ack)) => self.send(Envelope::ack(ack)).await,
            Ok(Err(e)) => self.fail(e.code(), e.to_string()).await,
            Err(e) => self.fail("Internal", e.to_string()).await,
        }
    }

    async fn on_message(&mut self, bytes: &[u8]) {
        let env = match Envelope::decode(bytes) {
            Ok(e) => e,
            Err(e) => return self.fail(e.code(), e.to_string()).await,
        };
        match env.msg_type {
            MessageType::Init => self.on_init(&env).await,
            MessageType::Frame => self.on_frame(&env).await,
            MessageType::End => self.on_end().await,
            MessageType::Control => self.on_control(&env).await,
            other => self.fail("ProtocolError", format!("unexpected {other:?} from client")).await,
        }
    }

    async fn close(&mut self) {
        self.unsubscribe();
        if let (Role::Producer, Some(r)) = (&self.role, self.runtime.take()) {
            log::info!("producer of {} disconnected without END", self.session_id);
            r.finish_live().await;
        }
    }
}

async fn connection(app: Arc<AppState>, session_id: String, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (out, mut outbox) = mpsc::channel::<Vec<u8>>(OUTBOX);
    let writer = tokio::spawn(async move {
        while let Some(bytes) = outbox.recv().await {
            if sink.send(Message::Binary(bytes.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let mut conn = Conn {
        app: app.clone(),
        session_id: session_id.clone(),
        out,
        role: Role::Undecided,
        runtime: None,
        forward: None,
    };
    // existing sessions stream their outputs to anyone who connects
    if app.store.exists(&session_id) {
        if let Ok(r) = app.runtime(&session_id) {
            conn.subscribe(&r);
        }
    }
    while let Some(msg) = stream.next().await {
        match msg {
            Ok(Message::Binary(b)) => conn.on_message(&b).await,
            Ok(Message::Text(_)) => conn.fail("ProtocolError", "text frames are not supported").await,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => {}
        }
    }
    conn.close().await;
    drop(conn);
    let _ = writer.await;
}
