//! Orchestrator server. Capture clients stream INIT/FRAME/END envelopes over
//! `/stream/{session_id}`; viewers on the same path receive COMPOSITE,
//! POINTCLOUD and ERROR envelopes and may send CONTROL. The REST API manages
//! sessions, models, protocols and replays.

pub mod config;
pub mod error;
mod http;
pub mod runtime;
pub mod storage;
mod ws;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use areval_core::gateway::{ModelDescriptor, ModelKind, ModelRegistry};
use areval_core::model::ExperimentProtocol;
use areval_core::pipeline::default_protocol;
use areval_core::store::{SessionStore, StoreError};

pub use config::{ConfigError, ServerConfig};
pub use error::ApiError;
pub use runtime::{RuntimeStats, SessionRuntime};
pub use storage::{DiskStorage, StorageBackend};

/// Registered at startup so a fresh server can composite without setup.
pub const PASSTHROUGH_MODEL: &str = "sensor-passthrough";

pub struct AppState {
    pub config: ServerConfig,
    pub store: SessionStore,
    pub registry: ModelRegistry,
    pub storage: Arc<dyn StorageBackend>,
    protocols: RwLock<BTreeMap<String, ExperimentProtocol>>,
    /// Protocol given to new sessions: the last one posted, else passthrough.
    default_protocol: RwLock<ExperimentProtocol>,
    sessions: Mutex<HashMap<String, Arc<SessionRuntime>>>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Result<Arc<Self>, StoreError> {
        let store = SessionStore::open(&config.storage_root)?;
        let storage = Arc::new(DiskStorage::new(store.clone()));
        Ok(Self::with_storage(config, store, storage))
    }

    /// Uses a custom storage backend for ingest, e.g. one that injects latency.
    pub fn with_storage(config: ServerConfig, store: SessionStore, storage: Arc<dyn StorageBackend>) -> Arc<Self> {
        let registry = ModelRegistry::new();
        let mut d = ModelDescriptor::builtin(PASSTHROUGH_MODEL, ModelKind::Depth, PASSTHROUGH_MODEL);
        d.timeout_ms = config.default_timeout_ms;
        registry.register(d).expect("passthrough registers");
        Arc::new(AppState {
            config,
            store,
            registry,
            storage,
            protocols: RwLock::new(BTreeMap::new()),
            default_protocol: RwLock::new(default_protocol(PASSTHROUGH_MODEL)),
            sessions: Mutex::new(HashMap::new()),
        })
    }

    /// Storage channel capacity per session. Much larger than the render
    /// queue so slow disks do not stall capture until the backlog is deep.
    pub fn storage_bound(&self) -> usize {
        (self.config.queue_bound * 16).max(64)
    }

    pub fn default_protocol(&self) -> ExperimentProtocol {
        self.default_protocol.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn protocol(&self, id: &str) -> Option<ExperimentProtocol> {
        self.protocols.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn protocols(&self) -> Vec<ExperimentProtocol> {
        self.protocols.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect()
    }

    /// Adds a validated protocol; false if the id is taken.
    pub fn add_protocol(&self, p: ExperimentProtocol) -> bool {
        let mut map = self.protocols.write().unwrap_or_else(|e| e.into_inner());
        if map.contains_key(&p.protocol_id) {
            return false;
        }
        *self.default_protocol.write().unwrap_or_else(|e| e.into_inner()) = p.clone();
        map.insert(p.protocol_id.clone(), p);
        true
    }

    /// The runtime of a stored session, created on first use.
    pub fn runtime(&self, session_id: &str) -> Result<Arc<SessionRuntime>, StoreError> {
        let mut sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(r) = sessions.get(session_id) {
            return Ok(r.clone());
        }
        let manifest = self.store.load_manifest(session_id)?;
        let r = Arc::new(SessionRuntime::new(manifest, self.default_protocol()));
        sessions.insert(session_id.to_string(), r.clone());
        Ok(r)
    }

    /// Runtime only if it already exists in memory.
    pub fn loaded_runtime(&self, session_id: &str) -> Option<Arc<SessionRuntime>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).get(session_id).cloned()
    }
}

pub fn router(state: Arc<AppState>) -> axum::Router {
    http::routes().merge(ws::routes()).with_state(state)
}

/// Serves until the process ends.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// A server on its own runtime thread, for tests and embedding. Stops when
/// dropped.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn start(state: Arc<AppState>) -> std::io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(&state.config.bind_address))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(state.clone());
        let thread = std::thread::Builder::new().name("areval-server".into()).spawn(move || {
            rt.block_on(async move {
                // open WebSocket connections would hold a graceful shutdown
                tokio::select! {
                    r = axum::serve(listener, app) => {
                        if let Err(e) = r {
                            log::error!("server stopped: {e}");
                        }
                    }
                    _ = rx => {}
                }
            });
            rt.shutdown_timeout(std::time::Duration::from_secs(2));
        })?;
        Ok(ServerHandle {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn http_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn ws_url(&self, session_id: &str) -> String {
        format!("ws://{}/stream/{session_id}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
