//! Model registry and inference dispatch. Models are either builtin
//! reference implementations, remote HTTP services, or custom in-process
//! backends registered by the embedding application.

mod builtin;
mod remote;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use builtin::{parse_builtin_spec, BuiltinModel, BUILTIN_NAMES};
pub use remote::{health, InferRequest, InferResponse, RemoteModel, WireDepth, WireEnvMap};

use crate::model::{is_valid_identifier, DepthMap, EnvironmentMap, Frame, SessionManifest};

pub const DEFAULT_TIMEOUT_MS: u64 = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Depth,
    Lighting,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Depth => "depth",
            ModelKind::Lighting => "lighting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Backend {
    Builtin {
        name: String,
        #[serde(default)]
        params: Map<String, Value>,
    },
    Remote {
        base_url: String,
    },
    /// In-process implementation supplied through
    /// [`ModelRegistry::register_backend`].
    Custom,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub task_kind: ModelKind,
    pub backend: Backend,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

impl ModelDescriptor {
    pub fn builtin(model_id: &str, task_kind: ModelKind, spec: &str) -> Self {
        ModelDescriptor {
            model_id: model_id.to_string(),
            task_kind,
            backend: Backend::Builtin {
                name: spec.to_string(),
                params: Map::new(),
            },
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn remote(model_id: &str, task_kind: ModelKind, base_url: &str) -> Self {
        ModelDescriptor {
            model_id: model_id.to_string(),
            task_kind,
            backend: Backend::Remote {
                base_url: base_url.to_string(),
            },
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Depth(DepthMap),
    Lighting(EnvironmentMap),
}

impl Prediction {
    pub fn kind(&self) -> ModelKind {
        match self {
            Prediction::Depth(_) => ModelKind::Depth,
            Prediction::Lighting(_) => ModelKind::Lighting,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub model_id: String,
    pub prediction: Prediction,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("model {0:?} is already registered")]
    DuplicateModel(String),
    #[error("bad descriptor: {0}")]
    BadDescriptor(String),
    #[error("no model {0:?}")]
    UnknownModel(String),
    #[error("model {model_id:?} timed out after {timeout_ms} ms")]
    ModelTimeout { model_id: String, timeout_ms: u64 },
    #[error("model {model_id:?} failed: {message}")]
    ModelError { model_id: String, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

impl GatewayError {
    /// Stable code used in ERROR envelopes and REST error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::DuplicateModel(_) => "DuplicateModel",
            GatewayError::BadDescriptor(_) => "BadDescriptor",
            GatewayError::UnknownModel(_) => "UnknownModel",
            GatewayError::ModelTimeout { .. } => "ModelTimeout",
            GatewayError::ModelError { .. } => "ModelError",
            GatewayError::SchemaMismatch(_) => "SchemaMismatch",
        }
    }
}

/// An inference implementation. Errors use [`GatewayError::ModelError`] or
/// [`GatewayError::SchemaMismatch`]; the registry fills in timeouts.
pub trait InferenceBackend: Send + Sync {
    fn infer(&self, frame: &Frame, manifest: &SessionManifest) -> Result<Prediction, GatewayError>;
}

#[derive(Clone)]
enum Dispatch {
    /// Fast and trusted: runs on the caller's thread.
    Inline(Arc<dyn InferenceBackend>),
    /// Runs on a helper thread so a stuck call can be abandoned.
    Guarded(Arc<dyn InferenceBackend>),
}

#[derive(Clone)]
pub struct RegisteredModel {
    pub descriptor: ModelDescriptor,
    dispatch: Dispatch,
}

impl fmt::Debug for RegisteredModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegisteredModel")
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

/// Shared model table; clones see the same registrations.
#[derive(Default, Clone)]
pub struct ModelRegistry {
    models: Arc<RwLock<BTreeMap<String, RegisteredModel>>>,
}

fn check_common(d: &ModelDescriptor) -> Result<(), GatewayError> {
    if !is_valid_identifier(&d.model_id) {
        return Err(GatewayError::BadDescriptor(format!("invalid model_id {:?}", d.model_id)));
    }
    if d.timeout_ms == 0 {
        return Err(GatewayError::BadDescriptor("timeout_ms must be > 0".into()));
    }
    Ok(())
}

impl ModelRegistry {
    pub fn new() -> Self {
        ModelRegistry::default()
    }

    fn insert(&self, model: RegisteredModel) -> Result<(), GatewayError> {
        let mut models = self.models.write().unwrap_or_else(|e| e.into_inner());
        let id = model.descriptor.model_id.clone();
        if models.contains_key(&id) {
            return Err(GatewayError::DuplicateModel(id));
        }
        models.insert(id, model);
        Ok(())
    }

    /// Registers a builtin or remote model.
    pub fn register(&self, d: ModelDescriptor) -> Result<(), GatewayError> {
        check_common(&d)?;
        let dispatch = match &d.backend {
            Backend::Builtin { name, params } => {
                let model = BuiltinModel::from_spec(name, params)?;
                if model.kind() != d.task_kind {
                    return Err(GatewayError::BadDescriptor(format!(
                        "builtin {name:?} is a {} model, descriptor says {}",
                        model.kind().as_str(),
                        d.task_kind.as_str()
                    )));
                }
                Dispatch::Inline(Arc::new(model))
            }
            Backend::Remote { base_url } => {
                let model = RemoteModel::new(&d.model_id, base_url, d.task_kind, d.timeout_ms)?;
                Dispatch::Inline(Arc::new(model))
            }
            Backend::Custom => {
                return Err(GatewayError::BadDescriptor(
                    "custom backends are registered in-process only".into(),
                ))
            }
        };
        self.insert(RegisteredModel {
            descriptor: d,
            dispatch,
        })
    }

    /// Registers an in-process backend; calls are abandoned with
    /// [`GatewayError::ModelTimeout`] after `timeout_ms`.
    pub fn register_backend(&self, model_id: &str, task_kind: ModelKind, timeout_ms: u64, backend: Arc<dyn InferenceBackend>) -> Result<(), GatewayError> {
        let d = ModelDescriptor {
            model_id: model_id.to_string(),
            task_kind,
            backend: Backend::Custom,
            timeout_ms,
        };
        check_common(&d)?;
        self.insert(RegisteredModel {
            descriptor: d,
            dispatch: Dispatch::Guarded(backend),
        })
    }

    pub fn get(&self, model_id: &str) -> Option<RegisteredModel> {
        self.models
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(model_id)
            .cloned()
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.get(model_id).is_some()
    }

    pub fn kind_of(&self, model_id: &str) -> Option<ModelKind> {
        self.get(model_id).map(|m| m.descriptor.task_kind)
    }

    pub fn descriptors(&self) -> Vec<ModelDescriptor> {
        self.models
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .map(|m| m.descriptor.clone())
            .collect()
    }

    /// Runs one model on one frame. Depth predictions keep the model's
    /// native resolution.
    pub fn infer(&self, model_id: &str, frame: &Arc<Frame>, manifest: &Arc<SessionManifest>) -> Result<InferenceOutput, GatewayError> {
        let model = self
            .get(model_id)
            .ok_or_else(|| GatewayError::UnknownModel(model_id.to_string()))?;
        let d = &model.descriptor;
        let start = Instant::now();
        let prediction = match &model.dispatch {
            Dispatch::Inline(b) => b.infer(frame, manifest)?,
            Dispatch::Guarded(b) => {
                let (tx, rx) = mpsc::sync_channel(1);
                let (b, f, m) = (b.clone(), frame.clone(), manifest.clone());
                std::thread::Builder::new()
                    .name(format!("infer-{model_id}"))
                    .spawn(move || {
                        let _ = tx.send(b.infer(&f, &m));
                    })
                    .map_err(|e| GatewayError::ModelError {
                        model_id: model_id.to_string(),
                        message: format!("cannot spawn inference thread: {e}"),
                    })?;
                match rx.recv_timeout(Duration::from_millis(d.timeout_ms)) {
                    Ok(r) => r?,
                    Err(mpsc::RecvTimeoutError::Timeout) => {
                        return Err(GatewayError::ModelTimeout {
                            model_id: model_id.to_string(),
                            timeout_ms: d.timeout_ms,
                        })
                    }
                    Err(mpsc::RecvTimeoutError::Disconnected) => {
                        return Err(GatewayError::ModelError {
                            model_id: model_id.to_string(),
                            message: "backend panicked".into(),
                        })
                    }
                }
            }
        };
        if prediction.kind() != d.task_kind {
            return Err(GatewayError::SchemaMismatch(format!(
                "model {model_id:?} returned a {} result, expected {}",
                prediction.kind().as_str(),
                d.task_kind.as_str()
            )));
        }
        Ok(InferenceOutput {
            model_id: model_id.to_string(),
            prediction,
            latency_ms: start.elapsed().as_secs_f64() * 1000.0,
        })
    }
}
