use std::sync::Arc;

use areval_core::gateway::{
    GatewayError, InferenceBackend, ModelDescriptor, ModelKind, ModelRegistry, Prediction,
};
use areval_core::imageio::decode_png;
use areval_core::model::{ExperimentProtocol, Frame, ProtocolEntry, SessionManifest, TaskKind};
use areval_core::pipeline::{
    replay, validate_protocol, FrameProcessor, PipelineError, ReplayCursor, ReplayOptions, StateEvent,
};
use areval_core::pointcloud::parse_pcd;
use areval_core::store::SessionStore;
use areval_core::synthetic::{generate, SceneKind, SyntheticSpec};
use areval_core::wire::{ControlCommand, MessageType};
use serde_json::{json, Map};

struct Broken;

impl InferenceBackend for Broken {
    fn infer(&self, _: &Frame, _: &SessionManifest) -> Result<Prediction, GatewayError> {
        Err(GatewayError::ModelError {
            model_id: "broken".into(),
            message: "weights missing".into(),
        })
    }
}

fn registry() -> ModelRegistry {
    let r = ModelRegistry::new();
    r.register(ModelDescriptor::builtin("sensor", ModelKind::Depth, "sensor-passthrough"))
        .unwrap();
    r.register(ModelDescriptor::builtin("far", ModelKind::Depth, "scale(k=1.5)"))
        .unwrap();
    r.register(ModelDescriptor::builtin("gray", ModelKind::Lighting, "gray-lit(0.8, 8)"))
        .unwrap();
    r.register(ModelDescriptor::builtin("white", ModelKind::Lighting, "gray-lit(1.0, 8)"))
        .unwrap();
    r.register_backend("broken", ModelKind::Depth, 1000, Arc::new(Broken)).unwrap();
    r
}

fn entry(model: &str, task: TaskKind, metrics: &[&str], params: serde_json::Value) -> ProtocolEntry {
    ProtocolEntry {
        model_id: model.into(),
        task,
        task_params: match params {
            serde_json::Value::Object(m) => m,
            _ => Map::new(),
        },
        metric_ids: metrics.iter().map(|s| s.to_string()).collect(),
    }
}

fn protocol(entries: Vec<ProtocolEntry>) -> ExperimentProtocol {
    ExperimentProtocol {
        protocol_id: "t".into(),
        entries,
    }
}

fn session(frames: u32) -> (tempfile::TempDir, SessionStore, String) {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let spec = SyntheticSpec::new(SceneKind::OrbitingBox, frames, 96, 72);
    let id = generate(&store, &spec).unwrap();
    (dir, store, id)
}

#[test]
fn every_task_produces_its_output() {
    let (_d, store, id) = session(2);
    let reg = registry();
    let p = protocol(vec![
        entry("sensor", TaskKind::ObjectRendering, &["rmse", "delta1"], json!({})),
        entry("far", TaskKind::OcclusionPlane, &["absrel"], json!({"depth_m": 2.0})),
        entry("sensor", TaskKind::PointCloud, &[], json!({"stride": 4})),
        entry("gray", TaskKind::EnvMapEval, &["si_rmse"], json!({"reference_model": "white"})),
        entry("gray", TaskKind::ThreeSphere, &["rmse"], json!({"reference_model": "white", "resolution": 16})),
        entry("gray", TaskKind::ObjectRendering, &[], json!({"material": "matte"})),
    ]);
    validate_protocol(&p, &reg).unwrap();
    let manifest = store.load_manifest(&id).unwrap();
    let mut proc = FrameProcessor::new(manifest, reg, None).unwrap();
    let frame = Arc::new(store.load_frame(&id, 1).unwrap());
    let out = proc.process(&frame, &p);
    assert_eq!(out.entries.len(), 6);
    let types: Vec<_> = out.envelopes().map(|e| e.msg_type).collect();
    assert_eq!(
        types,
        [
            MessageType::Composite,
            MessageType::Composite,
            MessageType::PointCloud,
            MessageType::Composite,
            MessageType::Composite,
            MessageType::Composite
        ]
    );
    let img = decode_png(out.entries[0].composite_png().unwrap()).unwrap();
    assert_eq!((img.width(), img.height()), (96, 72));
    let strip = decode_png(out.entries[4].composite_png().unwrap()).unwrap();
    assert_eq!((strip.width(), strip.height()), (48, 16));
    let cloud = parse_pcd(&out.entries[2].envelope.payloads[0]).unwrap();
    assert_eq!(cloud.len() as u64, out.entries[2].envelope.header["point_count"].as_u64().unwrap());
    assert!(!cloud.is_empty());

    // sensor against itself is exact
    let rmse = &out.entries[0].metrics[0];
    assert_eq!((rmse.metric_id.as_str(), rmse.value, rmse.frame_index), ("rmse", 0.0, 1));
    assert_eq!(out.entries[0].metrics[1].value, 1.0);
    assert!((out.entries[1].metrics[0].value - 0.5).abs() < 1e-3);
    // a uniform 0.8 map is a scaled copy of a uniform 1.0 map
    assert!(out.entries[3].metrics[0].value < 1e-9);
    let ids: Vec<_> = out.entries[4].metrics.iter().map(|r| r.metric_id.as_str()).collect();
    assert_eq!(ids, ["env_map.rmse", "diffuse.rmse", "matte.rmse", "mirror.rmse"]);
    assert_eq!(out.predictions.len(), 3);
}

#[test]
fn failing_model_does_not_abort_the_frame() {
    let (_d, store, id) = session(1);
    let p = protocol(vec![
        entry("broken", TaskKind::ObjectRendering, &["rmse"], json!({})),
        entry("sensor", TaskKind::ObjectRendering, &[], json!({})),
    ]);
    let mut proc = FrameProcessor::new(store.load_manifest(&id).unwrap(), registry(), None).unwrap();
    let out = proc.process(&Arc::new(store.load_frame(&id, 0).unwrap()), &p);
    assert!(out.entries[0].is_error());
    let h = &out.entries[0].envelope.header;
    assert_eq!(h["code"], "ModelError");
    assert_eq!(h["model_id"], "broken");
    assert_eq!(h["frame_index"], 0);
    assert_eq!(h["task"], "object_rendering");
    assert!(out.entries[0].metrics.is_empty());
    assert!(out.entries[1].composite_png().is_some());
}

#[test]
fn controls_take_effect_on_the_next_frame() {
    let (_d, store, id) = session(1);
    let p = protocol(vec![
        entry("sensor", TaskKind::OcclusionPlane, &[], json!({})),
        entry("far", TaskKind::OcclusionPlane, &[], json!({})),
    ]);
    let mut proc = FrameProcessor::new(store.load_manifest(&id).unwrap(), registry(), None).unwrap();
    let frame = Arc::new(store.load_frame(&id, 0).unwrap());
    let before = proc.process(&frame, &p);
    proc.apply_control(&ControlCommand::SetPlaneDepth {
        session_id: id.clone(),
        depth_m: 50.0,
    })
    .unwrap();
    proc.apply_control(&ControlCommand::SelectModels {
        session_id: id.clone(),
        model_ids: vec!["sensor".into()],
    })
    .unwrap();
    let after = proc.process(&frame, &p);
    assert_eq!(before.entries.len(), 2);
    assert_eq!(after.entries.len(), 1);
    // a plane 50 m away hides behind every valid sensor sample
    let a = decode_png(after.entries[0].composite_png().unwrap()).unwrap();
    let valid_dark = frame
        .depth
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0)
        .all(|(i, _)| a.values()[i * 3..i * 3 + 3] == frame.rgb.values()[i * 3..i * 3 + 3]);
    assert!(valid_dark);
    let err = proc
        .apply_control(&ControlCommand::SetPlaneDepth {
            session_id: id.clone(),
            depth_m: 0.0,
        })
        .unwrap_err();
    assert!(matches!(err, PipelineError::NonpositiveDepth(_)));
    assert_eq!(proc.state().plane_depth_m, Some(50.0));
}

#[test]
fn replay_is_deterministic_and_rewrites_metrics() {
    let (_d, store, id) = session(4);
    let reg = registry();
    let p = protocol(vec![
        entry("far", TaskKind::ObjectRendering, &["rmse", "absrel", "delta1"], json!({})),
        entry("far", TaskKind::OcclusionPlane, &[], json!({})),
    ]);
    store
        .append_event(
            &id,
            &StateEvent {
                frame_index: 2,
                command: ControlCommand::SetPlaneDepth {
                    session_id: id.clone(),
                    depth_m: 0.3,
                },
            },
        )
        .unwrap();
    let mut first = Vec::new();
    let s = replay(&store, &reg, &id, &p, &ReplayOptions::default(), None, |o| {
        first.push(o.entries.iter().map(|e| e.envelope.encode().unwrap()).collect::<Vec<_>>());
        true
    })
    .unwrap();
    assert_eq!((s.frames, s.composites, s.errors), (4, 8, 0));
    let metrics_a = store.read_metrics(&id, "far").unwrap();
    let mut second = Vec::new();
    replay(&store, &reg, &id, &p, &ReplayOptions::default(), None, |o| {
        second.push(o.entries.iter().map(|e| e.envelope.encode().unwrap()).collect::<Vec<_>>());
        true
    })
    .unwrap();
    assert_eq!(first, second);
    assert_eq!(metrics_a, store.read_metrics(&id, "far").unwrap());
    assert_eq!(metrics_a.lines().count(), 12);
    // the recorded plane move changes frames 2 and 3 only
    assert!(store.composite_path(&id, "far", TaskKind::OcclusionPlane, 3).exists());

    let mut cursor = ReplayCursor::open(&store, &reg, &id, p.clone(), None).unwrap();
    assert_eq!(cursor.seek(3).unwrap().entries[1].envelope.encode().unwrap(), first[3][1]);
    assert_eq!(cursor.state().plane_depth_m, Some(0.3));
    assert_eq!(cursor.seek(1).unwrap().entries[1].envelope.encode().unwrap(), first[1][1]);
    assert_eq!(cursor.state().plane_depth_m, None);
    assert!(matches!(cursor.seek(4), Err(PipelineError::SeekOutOfRange { .. })));
}

#[test]
fn invalid_protocol_is_rejected_before_replay() {
    let (_d, store, id) = session(1);
    let p = protocol(vec![entry("gray", TaskKind::PointCloud, &[], json!({}))]);
    let r = replay(&store, &registry(), &id, &p, &ReplayOptions::default(), None, |_| true);
    assert!(matches!(r, Err(PipelineError::InvalidProtocol(_))));
}
