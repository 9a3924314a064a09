#![allow(dead_code)]

use std::net::TcpStream;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use areval_core::model::SessionManifest;
use areval_core::wire::{Envelope, MessageType};
use areval_server::{AppState, ServerConfig, ServerHandle, StorageBackend};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

pub fn config(root: &Path) -> ServerConfig {
    ServerConfig {
        bind_address: "127.0.0.1:0".into(),
        storage_root: root.to_path_buf(),
        ..ServerConfig::default()
    }
}

pub fn start(root: &Path) -> ServerHandle {
    ServerHandle::start(AppState::new(config(root)).unwrap()).unwrap()
}

pub fn start_with(config: ServerConfig, storage: Option<Arc<dyn StorageBackend>>) -> ServerHandle {
    let state = match storage {
        Some(s) => {
            let store = areval_core::store::SessionStore::open(&config.storage_root).unwrap();
            AppState::with_storage(config, store, s)
        }
        None => AppState::new(config).unwrap(),
    };
    ServerHandle::start(state).unwrap()
}

pub struct Client {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
}

impl Client {
    pub fn connect(srv: &ServerHandle, session_id: &str) -> Client {
        let (ws, _) = tungstenite::connect(srv.ws_url(session_id)).unwrap();
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_nodelay(true).unwrap();
        }
        Client { ws }
    }

    pub fn send(&mut self, env: &Envelope) {
        self.ws.send(Message::Binary(env.encode().unwrap().into())).unwrap();
    }

    pub fn send_raw(&mut self, bytes: Vec<u8>) {
        self.ws.send(Message::Binary(bytes.into())).unwrap();
    }

    /// Next envelope, or None after `timeout` of silence.
    pub fn recv_timeout(&mut self, timeout: Duration) -> Option<Envelope> {
        if let MaybeTlsStream::Plain(s) = self.ws.get_ref() {
            s.set_read_timeout(Some(timeout)).unwrap();
        }
        loop {
            match self.ws.read() {
                Ok(Message::Binary(b)) => return Some(Envelope::decode(&b).unwrap()),
                Ok(Message::Close(_)) => return None,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
                {
                    return None
                }
                Err(e) => panic!("websocket error: {e}"),
            }
        }
    }

    pub fn recv(&mut self) -> Envelope {
        self.recv_timeout(Duration::from_secs(20)).expect("no message within 20 s")
    }

    /// Skips output envelopes until one of type `t` arrives.
    pub fn recv_type(&mut self, t: MessageType) -> Envelope {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let env = self.recv_timeout(left.max(Duration::from_millis(1))).unwrap_or_else(|| panic!("no {t:?} within 20 s"));
            if env.msg_type == t {
                return env;
            }
        }
    }

    pub fn close(mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}

/// INIT + every frame + END from one producer connection.
pub fn produce(srv: &ServerHandle, manifest: &SessionManifest, frames: impl IntoIterator<Item = areval_core::model::Frame>) {
    let mut c = Client::connect(srv, &manifest.session_id);
    c.send(&areval_core::wire::init_envelope(manifest));
    assert_eq!(c.recv().msg_type, MessageType::Ack);
    for f in frames {
        c.send(&areval_core::wire::frame_envelope(&f).unwrap());
        let ack = c.recv();
        assert_eq!(ack.msg_type, MessageType::Ack, "{}", ack.header);
    }
    c.send(&Envelope::end());
    assert_eq!(c.recv().msg_type, MessageType::End);
    c.close();
}

pub fn http_get(srv: &ServerHandle, path: &str) -> (u16, Vec<u8>) {
    let agent = agent();
    match agent.get(&format!("{}{path}", srv.http_url())).call() {
        Ok(mut r) => (r.status().as_u16(), r.body_mut().read_to_vec().unwrap()),
        Err(e) => panic!("GET {path}: {e}"),
    }
}

pub fn http_send(srv: &ServerHandle, method: &str, path: &str, body: &serde_json::Value) -> (u16, serde_json::Value) {
    let agent = agent();
    let url = format!("{}{path}", srv.http_url());
    let text = body.to_string();
    let resp = match method {
        "POST" => agent.post(&url).header("content-type", "application/json").send(text.as_bytes()),
        "PUT" => agent.put(&url).header("content-type", "application/json").send(text.as_bytes()),
        _ => unreachable!(),
    };
    let mut r = resp.unwrap_or_else(|e| panic!("{method} {path}: {e}"));
    let status = r.status().as_u16();
    let bytes = r.body_mut().read_to_vec().unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

pub fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}
