//! The per-frame evaluation pipeline: protocol validation, interactive
//! state, running protocol entries on frames, persisting their outputs and
//! replaying stored sessions.

mod process;
mod queue;
mod replay;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use process::{EntryOutput, FrameOutput, FrameProcessor};
pub use queue::{FrameQueue, QueueClosed};
pub use replay::{persist_output, replay, Pacing, ReplayCursor, ReplayOptions, ReplaySummary};

use crate::gateway::{ModelKind, ModelRegistry};
use crate::metrics::{is_registered_metric, DEPTH_METRIC_IDS, LIGHTING_METRIC_IDS};
use crate::model::{is_valid_identifier, ExperimentProtocol, Pose, ProtocolEntry, SessionManifest, TaskKind};
use crate::render::RenderError;
use crate::store::StoreError;
use crate::wire::{ControlCommand, Envelope, MessageType};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("plane depth must be > 0, got {0}")]
    NonpositiveDepth(f64),
    #[error("invalid control command: {0}")]
    InvalidControl(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("session {0} has no frames")]
    EmptySession(String),
    #[error("frame {index} is out of range for a session of {frame_count} frames")]
    SeekOutOfRange { index: u64, frame_count: u64 },
}

impl PipelineError {
    /// Stable code used in ERROR envelopes and REST error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::InvalidProtocol(_) => "InvalidProtocol",
            PipelineError::NonpositiveDepth(_) => "NonpositiveDepth",
            PipelineError::InvalidControl(_) => "InvalidControl",
            PipelineError::Store(e) => store_error_code(e),
            PipelineError::Render(RenderError::UnknownObject(_)) => "UnknownObject",
            PipelineError::Render(RenderError::ResolutionMismatch { .. }) => "ResolutionMismatch",
            PipelineError::Render(_) => "RenderError",
            PipelineError::EmptySession(_) => "EmptySession",
            PipelineError::SeekOutOfRange { .. } => "OutOfRange",
        }
    }
}

pub fn store_error_code(e: &StoreError) -> &'static str {
    match e {
        StoreError::DuplicateSession(_) => "DuplicateSession",
        StoreError::StorageUnavailable(_) => "StorageUnavailable",
        StoreError::OutOfOrderFrame { .. } => "OutOfOrderFrame",
        StoreError::NoSuchSession(_) => "NoSuchSession",
        StoreError::NoSuchFrame { .. } => "NoSuchFrame",
        StoreError::CorruptFrame { .. } => "CorruptFrame",
        StoreError::NoSuchResult { .. } => "NoSuchResult",
        StoreError::InvalidIdentifier(_) => "InvalidIdentifier",
        StoreError::InvalidFrame(_) => "InvalidFrame",
        StoreError::Malformed { .. } => "Malformed",
    }
}

/// Model kinds a task accepts.
pub fn task_accepts(task: TaskKind, kind: ModelKind) -> bool {
    match task {
        TaskKind::ObjectRendering => true,
        TaskKind::OcclusionPlane | TaskKind::PointCloud => kind == ModelKind::Depth,
        TaskKind::EnvMapEval | TaskKind::ThreeSphere => kind == ModelKind::Lighting,
    }
}

pub(crate) fn param_f64(params: &Map<String, Value>, key: &str) -> Option<f64> {
    params.get(key).and_then(Value::as_f64)
}

pub(crate) fn param_str<'a>(params: &'a Map<String, Value>, key: &str) -> Option<&'a str> {
    params.get(key).and_then(Value::as_str)
}

fn check_entry(i: usize, e: &ProtocolEntry, registry: &ModelRegistry) -> Result<(), String> {
    let kind = registry
        .kind_of(&e.model_id)
        .ok_or_else(|| format!("entries[{i}]: model {:?} is not registered", e.model_id))?;
    if !task_accepts(e.task, kind) {
        return Err(format!(
            "entries[{i}]: task {} cannot use {} model {:?}",
            e.task,
            kind.as_str(),
            e.model_id
        ));
    }
    for m in &e.metric_ids {
        if !is_registered_metric(m) {
            return Err(format!("entries[{i}]: metric {m:?} is not registered"));
        }
        let fits = match kind {
            ModelKind::Depth => DEPTH_METRIC_IDS.contains(&m.as_str()),
            ModelKind::Lighting => {
                LIGHTING_METRIC_IDS.contains(&m.as_str()) && matches!(e.task, TaskKind::EnvMapEval | TaskKind::ThreeSphere)
            }
        };
        if !fits {
            return Err(format!("entries[{i}]: metric {m:?} does not apply to {} on a {} model", e.task, kind.as_str()));
        }
    }
    let has_lighting_metrics = kind == ModelKind::Lighting && !e.metric_ids.is_empty();
    match param_str(&e.task_params, "reference_model") {
        Some(r) => match registry.kind_of(r) {
            Some(ModelKind::Lighting) => {}
            _ => return Err(format!("entries[{i}]: reference_model {r:?} is not a registered lighting model")),
        },
        None if has_lighting_metrics && param_str(&e.task_params, "reference_pfm").is_none() => {
            return Err(format!("entries[{i}]: lighting metrics need task_params.reference_model or reference_pfm"))
        }
        None => {}
    }
    if let Some(d) = param_f64(&e.task_params, "depth_m") {
        if !(d > 0.0) {
            return Err(format!("entries[{i}]: task_params.depth_m must be > 0"));
        }
    }
    if let Some(s) = e.task_params.get("stride") {
        if s.as_u64().is_none_or(|s| s == 0) {
            return Err(format!("entries[{i}]: task_params.stride must be a positive integer"));
        }
    }
    if let Some(r) = e.task_params.get("resolution") {
        if r.as_u64().is_none_or(|r| !(8..=1024).contains(&r)) {
            return Err(format!("entries[{i}]: task_params.resolution must be an integer in 8..=1024"));
        }
    }
    Ok(())
}

/// Checks that every model is registered and suits its task, and that every
/// metric is registered and applies to the entry.
pub fn validate_protocol(p: &ExperimentProtocol, registry: &ModelRegistry) -> Result<(), PipelineError> {
    if !is_valid_identifier(&p.protocol_id) {
        return Err(PipelineError::InvalidProtocol(format!("invalid protocol_id {:?}", p.protocol_id)));
    }
    if p.entries.is_empty() {
        return Err(PipelineError::InvalidProtocol("entries must not be empty".into()));
    }
    for (i, e) in p.entries.iter().enumerate() {
        check_entry(i, e, registry).map_err(PipelineError::InvalidProtocol)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectOverride {
    pub pose: Pose,
    pub scale: f64,
}

/// User-steerable settings that apply from the next processed frame on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractiveState {
    pub plane_depth_m: Option<f64>,
    pub object_overrides: BTreeMap<String, ObjectOverride>,
    pub selected_models: Option<Vec<String>>,
}

impl InteractiveState {
    /// Applies a state-changing command. Replay navigation commands leave
    /// the state untouched.
    pub fn apply(&mut self, cmd: &ControlCommand, manifest: &SessionManifest) -> Result<(), PipelineError> {
        match cmd {
            ControlCommand::SetPlaneDepth { depth_m, .. } => {
                if !(*depth_m > 0.0) || !depth_m.is_finite() {
                    return Err(PipelineError::NonpositiveDepth(*depth_m));
                }
                self.plane_depth_m = Some(*depth_m);
            }
            ControlCommand::SetObjectPose {
                object_id, pose, scale, ..
            } => {
                if !manifest.objects.iter().any(|o| &o.object_id == object_id) {
                    return Err(RenderError::UnknownObject(object_id.clone()).into());
                }
                if !(*scale > 0.0) || !scale.is_finite() {
                    return Err(PipelineError::InvalidControl(format!("scale must be > 0, got {scale}")));
                }
                if !pose.is_rigid(1e-6) {
                    return Err(PipelineError::InvalidControl("pose is not a rigid transform".into()));
                }
                self.object_overrides.insert(
                    object_id.clone(),
                    ObjectOverride {
                        pose: *pose,
                        scale: *scale,
                    },
                );
            }
            ControlCommand::SelectModels { model_ids, .. } => {
                self.selected_models = Some(model_ids.clone());
            }
            ControlCommand::ReplaySeek { .. } | ControlCommand::ReplayMode { .. } => {}
        }
        Ok(())
    }

    pub fn is_selected(&self, model_id: &str) -> bool {
        self.selected_models
            .as_ref()
            .is_none_or(|s| s.iter().any(|m| m == model_id))
    }
}

/// A recorded state change, effective from `frame_index` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEvent {
    pub frame_index: u64,
    pub command: ControlCommand,
}

/// ERROR envelope for one failed protocol entry.
pub fn entry_error_envelope(code: &str, message: &str, session_id: &str, frame_index: u64, model_id: &str, task: TaskKind) -> Envelope {
    Envelope::new(
        MessageType::Error,
        json!({
            "code": code,
            "message": message,
            "session_id": session_id,
            "frame_index": frame_index,
            "model_id": model_id,
            "task": task,
        }),
        Vec::new(),
    )
}

/// Protocol used when a session has none configured: sensor depth through
/// object rendering with the full depth metric suite.
pub fn default_protocol(model_id: &str) -> ExperimentProtocol {
    ExperimentProtocol {
        protocol_id: "default".into(),
        entries: vec![ProtocolEntry {
            model_id: model_id.into(),
            task: TaskKind::ObjectRendering,
            task_params: Map::new(),
            metric_ids: DEPTH_METRIC_IDS.iter().map(|s| s.to_string()).collect(),
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ModelDescriptor;
    use crate::model::sample_manifest;

    fn registry() -> ModelRegistry {
        let r = ModelRegistry::new();
        r.register(ModelDescriptor::builtin("sensor", ModelKind::Depth, "sensor-passthrough"))
            .unwrap();
        r.register(ModelDescriptor::builtin("gray", ModelKind::Lighting, "gray-lit(0.5)"))
            .unwrap();
        r
    }

    fn entry(model: &str, task: TaskKind, metrics: &[&str]) -> ProtocolEntry {
        ProtocolEntry {
            model_id: model.into(),
            task,
            task_params: Map::new(),
            metric_ids: metrics.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn proto(entries: Vec<ProtocolEntry>) -> ExperimentProtocol {
        ExperimentProtocol {
            protocol_id: "p".into(),
            entries,
        }
    }

    #[test]
    fn protocol_validation() {
        let r = registry();
        assert!(validate_protocol(&proto(vec![entry("sensor", TaskKind::OcclusionPlane, &["rmse"])]), &r).is_ok());
        assert!(validate_protocol(&default_protocol("sensor"), &r).is_ok());
        for bad in [
            proto(vec![]),
            proto(vec![entry("ghost", TaskKind::OcclusionPlane, &[])]),
            proto(vec![entry("sensor", TaskKind::OcclusionPlane, &["psnr"])]),
            proto(vec![entry("sensor", TaskKind::ThreeSphere, &[])]),
            proto(vec![entry("gray", TaskKind::EnvMapEval, &["rmse"])]),
            proto(vec![entry("gray", TaskKind::EnvMapEval, &["delta1"])]),
        ] {
            assert!(matches!(validate_protocol(&bad, &r), Err(PipelineError::InvalidProtocol(_))), "{bad:?}");
        }
        let mut ok = entry("gray", TaskKind::ThreeSphere, &["si_rmse"]);
        ok.task_params.insert("reference_model".into(), "gray".into());
        assert!(validate_protocol(&proto(vec![ok]), &r).is_ok());
    }

    #[test]
    fn state_rejects_bad_commands() {
        let m = sample_manifest();
        let mut s = InteractiveState::default();
        let neg = ControlCommand::SetPlaneDepth {
            session_id: "s1".into(),
            depth_m: -1.0,
        };
        assert!(matches!(s.apply(&neg, &m), Err(PipelineError::NonpositiveDepth(_))));
        let ghost = ControlCommand::SetObjectPose {
            session_id: "s1".into(),
            object_id: "ghost".into(),
            pose: Pose::IDENTITY,
            scale: 1.0,
        };
        assert_eq!(s.apply(&ghost, &m).unwrap_err().code(), "UnknownObject");
        s.apply(
            &ControlCommand::SelectModels {
                session_id: "s1".into(),
                model_ids: vec!["a".into()],
            },
            &m,
        )
        .unwrap();
        assert!(s.is_selected("a") && !s.is_selected("b"));
    }
}
