//! Capture simulator. Generates synthetic sessions on disk and streams
//! stored sessions to a server as INIT, paced FRAMEs and END.

use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use areval_core::model::SessionManifest;
use areval_core::store::SessionStore;
use areval_core::synthetic::{self, SyntheticSpec};
use areval_core::wire::{frame_envelope, init_envelope, Envelope, MessageType};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("cannot connect to {url}: {message}")]
    ConnectionRefused { url: String, message: String },
    #[error("server replied {code}: {message}")]
    ProtocolError { code: String, message: String },
    #[error("stored session is unusable: {0}")]
    LayoutError(String),
    #[error("connection failed: {0}")]
    Transport(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
}

impl SimError {
    fn protocol(env: &Envelope) -> SimError {
        let field = |k: &str| env.header.get(k).and_then(|v| v.as_str()).unwrap_or("").to_string();
        if env.msg_type == MessageType::Error {
            SimError::ProtocolError {
                code: field("code"),
                message: field("message"),
            }
        } else {
            SimError::ProtocolError {
                code: "UnexpectedMessage".into(),
                message: format!("unexpected {:?} {}", env.msg_type, env.header),
            }
        }
    }
}

/// Writes a synthetic session under `root` and returns its id.
pub fn generate(root: &Path, spec: &SyntheticSpec) -> Result<String, SimError> {
    let store = SessionStore::open(root).map_err(|e| SimError::LayoutError(e.to_string()))?;
    synthetic::generate(&store, spec).map_err(|e| SimError::LayoutError(e.to_string()))
}

/// Parses `WxH`, e.g. `640x480`.
pub fn parse_resolution(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err(format!("resolution must be nonzero, got {s:?}"));
    }
    Ok((w, h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOptions {
    pub root: PathBuf,
    pub session_id: String,
    /// Server base URL (`ws://host:port`) or a full `/stream/{id}` URL.
    pub url: String,
    pub fps: f64,
    /// Number of passes over the session; 0 streams until an error.
    pub passes: u32,
    /// Session id announced to the server; defaults to `session_id`.
    pub target_session: Option<String>,
}

impl StreamOptions {
    pub fn new(root: impl Into<PathBuf>, session_id: &str, url: &str, fps: f64) -> Self {
        StreamOptions {
            root: root.into(),
            session_id: session_id.to_string(),
            url: url.to_string(),
            fps,
            passes: 1,
            target_session: None,
        }
    }

    fn stream_url(&self, target: &str) -> String {
        let base = self.url.trim_end_matches('/');
        if base.contains("/stream/") {
            base.to_string()
        } else {
            format!("{base}/stream/{target}")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StreamStats {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub mean_interframe_ms: f64,
    pub acks_received: u64,
}

type Socket = WebSocket<MaybeTlsStream<TcpStream>>;

fn transport(e: tungstenite::Error) -> SimError {
    SimError::Transport(e.to_string())
}

fn send(ws: &mut Socket, env: &Envelope) -> Result<u64, SimError> {
    let bytes = env.encode().map_err(|e| SimError::LayoutError(e.to_string()))?;
    let n = bytes.len() as u64;
    ws.send(Message::Binary(bytes.into())).map_err(transport)?;
    Ok(n)
}

/// Next binary envelope from the server.
fn receive(ws: &mut Socket) -> Result<Envelope, SimError> {
    loop {
        match ws.read().map_err(transport)? {
            Message::Binary(b) => {
                return Envelope::decode(&b).map_err(|e| SimError::ProtocolError {
                    code: e.code().into(),
                    message: e.to_string(),
                })
            }
            Message::Close(_) => return Err(SimError::Transport("server closed the connection".into())),
            _ => {}
        }
    }
}

fn expect(ws: &mut Socket, t: MessageType) -> Result<Envelope, SimError> {
    let env = receive(ws)?;
    if env.msg_type != t {
        return Err(SimError::protocol(&env));
    }
    Ok(env)
}

/// Streams a stored session: INIT, then every frame at `fps` (frame `i` is
/// sent no earlier than `start + i / fps`), then END. Each message waits for
/// the server's reply before the next is sent.
pub fn stream_session(opts: &StreamOptions) -> Result<StreamStats, SimError> {
    if !(opts.fps > 0.0 && opts.fps.is_finite()) {
        return Err(SimError::InvalidOption(format!("fps must be > 0, got {}", opts.fps)));
    }
    let store = SessionStore::open(&opts.root).map_err(|e| SimError::LayoutError(e.to_string()))?;
    let stored = store
        .load_manifest(&opts.session_id)
        .map_err(|e| SimError::LayoutError(e.to_string()))?;
    let count = store
        .frame_count(&opts.session_id)
        .map_err(|e| SimError::LayoutError(e.to_string()))?;
    if count == 0 {
        return Err(SimError::LayoutError(format!("session {} has no frames", opts.session_id)));
    }
    let target = opts.target_session.clone().unwrap_or_else(|| opts.session_id.clone());
    let manifest = SessionManifest {
        session_id: target.clone(),
        ..(*stored).clone()
    };
    let url = opts.stream_url(&target);
    let (mut ws, _) = tungstenite::connect(url.as_str()).map_err(|e| SimError::ConnectionRefused {
        url: url.clone(),
        message: e.to_string(),
    })?;

    let mut stats = StreamStats::default();
    stats.bytes_sent += send(&mut ws, &init_envelope(&manifest))?;
    expect(&mut ws, MessageType::Ack)?;
    stats.acks_received += 1;

    let start = Instant::now();
    let period = Duration::from_secs_f64(1.0 / opts.fps);
    let mut last_sent: Option<Instant> = None;
    let mut gaps = 0.0;
    let mut pass = 0u32;
    let span = store
        .load_frame(&opts.session_id, count - 1)
        .map(|f| f.timestamp_ns)
        .map_err(|e| SimError::LayoutError(e.to_string()))?;
    'passes: loop {
        for i in 0..count {
            let mut frame = store
                .load_frame(&opts.session_id, i)
                .map_err(|e| SimError::LayoutError(e.to_string()))?;
            // later passes continue the index and clock of the first
            let n = pass as u64 * count + i;
            frame.index = n;
            frame.timestamp_ns += pass as u64 * (span + period.as_nanos() as u64);
            let env = frame_envelope(&frame).map_err(|e| SimError::LayoutError(e.to_string()))?;
            let due = start + Duration::from_secs_f64(n as f64 / opts.fps);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
            let sent_at = Instant::now();
            stats.bytes_sent += send(&mut ws, &env)?;
            if let Some(prev) = last_sent {
                gaps += (sent_at - prev).as_secs_f64() * 1000.0;
            }
            last_sent = Some(sent_at);
            stats.frames_sent += 1;
            expect(&mut ws, MessageType::Ack)?;
            stats.acks_received += 1;
        }
        pass += 1;
        if opts.passes != 0 && pass >= opts.passes {
            break 'passes;
        }
    }
    if stats.frames_sent > 1 {
        stats.mean_interframe_ms = gaps / (stats.frames_sent - 1) as f64;
    }
    stats.bytes_sent += send(&mut ws, &Envelope::end())?;
    expect(&mut ws, MessageType::End)?;
    let _ = ws.close(None);
    Ok(stats)
}
