mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::json;

use areval_core::gateway::{GatewayError, InferenceBackend, ModelKind, Prediction};
use areval_core::model::{Frame, SessionManifest};
use areval_core::pipeline::{FrameOutput, PipelineError, StateEvent};
use areval_core::store::{SessionHandle, SessionStore, StoreError};
use areval_core::synthetic::{SceneKind, SyntheticSpec};
use areval_core::wire::{frame_envelope, init_envelope, ControlCommand, Envelope, MessageType, ReplayMode};
use areval_server::{DiskStorage, StorageBackend};

use common::*;

fn manifest(id: &str, frames: u32) -> (SessionManifest, Vec<Frame>) {
    let spec = SyntheticSpec::new(SceneKind::Ramp, frames, 32, 24);
    let mut m = spec.manifest();
    m.session_id = id.into();
    (m, spec.frames().collect())
}

#[test]
fn rest_errors_use_stable_codes() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path());
    assert_eq!(http_get(&srv, "/health").0, 200);

    let (status, body) = http_get(&srv, "/sessions/ghost");
    assert_eq!((status, json(&body)["code"].as_str()), (404, Some("NoSuchSession")));
    assert_eq!(http_get(&srv, "/sessions/ghost/frames/0").0, 404);
    assert_eq!(http_get(&srv, "/sessions/ghost/stats").0, 404);

    let (m, _) = manifest("rest-1", 0);
    let mv = serde_json::to_value(&m).unwrap();
    assert_eq!(http_send(&srv, "POST", "/sessions", &mv).0, 201);
    let (status, body) = http_send(&srv, "POST", "/sessions", &mv);
    assert_eq!((status, body["code"].as_str()), (409, Some("DuplicateSession")));
    let mut bad = mv.clone();
    bad["session_id"] = json!("rest-2");
    bad["intrinsics"]["fx"] = json!(0.0);
    let (status, body) = http_send(&srv, "POST", "/sessions", &bad);
    assert_eq!((status, body["code"].as_str()), (400, Some("InvalidManifest")));
    assert!(body["message"].as_str().unwrap().contains("intrinsics.fx"), "{body}");

    let (status, body) = http_get(&srv, "/sessions/rest-1/frames/0");
    assert_eq!((status, json(&body)["code"].as_str()), (404, Some("NoSuchFrame")));

    let model = json!({"model_id": "half", "task_kind": "depth", "backend": {"type": "builtin", "name": "scale(k=0.5)"}});
    let (status, _) = http_send(&srv, "POST", "/models", &model);
    assert_eq!(status, 201);
    let (status, body) = http_send(&srv, "POST", "/models", &model);
    assert_eq!((status, body["code"].as_str()), (409, Some("DuplicateModel")));
    let (_, models) = http_get(&srv, "/models");
    let models = json(&models);
    let half = models.as_array().unwrap().iter().find(|d| d["model_id"] == "half").unwrap();
    assert_eq!(half["timeout_ms"], 5000);

    let proto = json!({"protocol_id": "p1", "entries": [{"model_id": "half", "task": "occlusion_plane", "metric_ids": ["absrel"]}]});
    assert_eq!(http_send(&srv, "POST", "/protocols", &proto).0, 201);
    assert_eq!(http_send(&srv, "POST", "/protocols", &proto).0, 409);
    let unknown = json!({"protocol_id": "p2", "entries": [{"model_id": "nobody", "task": "occlusion_plane"}]});
    let (status, body) = http_send(&srv, "POST", "/protocols", &unknown);
    assert_eq!((status, body["code"].as_str()), (400, Some("InvalidProtocol")));
    assert!(body["message"].as_str().unwrap().contains("nobody"), "{body}");
    let mismatched = json!({"protocol_id": "p3", "entries": [{"model_id": "half", "task": "env_map_eval"}]});
    let (status, body) = http_send(&srv, "POST", "/protocols", &mismatched);
    assert_eq!((status, body["code"].as_str()), (400, Some("InvalidProtocol")));

    let (status, body) = http_send(&srv, "POST", "/sessions/rest-1/control", &json!({"command": "set_plane_depth", "session_id": "rest-1", "depth_m": -1.0}));
    assert_eq!((status, body["code"].as_str()), (400, Some("NonpositiveDepth")));
    let pose: Vec<f64> = vec![1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.];
    let (status, body) = http_send(&srv, "POST", "/sessions/rest-1/control", &json!({"command": "set_object_pose", "session_id": "rest-1", "object_id": "teapot", "pose": pose, "scale": 1.0}));
    assert_eq!((status, body["code"].as_str()), (404, Some("UnknownObject")));
}

#[test]
fn init_errors_come_back_as_error_envelopes() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path());
    let (m, frames) = manifest("ws-1", 2);
    produce(&srv, &m, frames);

    let mut c = Client::connect(&srv, "ws-1");
    c.send(&init_envelope(&m));
    let e = c.recv_type(MessageType::Error);
    assert_eq!(e.header["code"], "DuplicateSession");

    let (mut bad, _) = manifest("ws-2", 0);
    bad.intrinsics.fx = 0.0;
    let mut c = Client::connect(&srv, "ws-2");
    c.send(&init_envelope(&bad));
    let e = c.recv();
    assert_eq!(e.header["code"], "InvalidManifest");
    assert!(e.header["message"].as_str().unwrap().contains("intrinsics.fx"));

    // garbage and out-of-order frames
    let (m3, frames3) = manifest("ws-3", 3);
    let mut c = Client::connect(&srv, "ws-3");
    c.send_raw(b"ARCX....".to_vec());
    assert_eq!(c.recv().header["code"], "BadMagic");
    c.send(&init_envelope(&m3));
    assert_eq!(c.recv().msg_type, MessageType::Ack);
    c.send(&frame_envelope(&frames3[1]).unwrap());
    let e = c.recv();
    assert_eq!((e.header["code"].as_str(), e.header["frame_index"].as_u64()), (Some("OutOfOrderFrame"), Some(1)));
    c.send(&frame_envelope(&frames3[0]).unwrap());
    assert_eq!(c.recv().header["frame_index"], 0);
    c.send(&Envelope::end());
    assert_eq!(c.recv_type(MessageType::End).msg_type, MessageType::End);
}

/// Adds latency to every frame write.
struct SlowStorage {
    inner: DiskStorage,
    delay: Duration,
}

impl StorageBackend for SlowStorage {
    fn append_frame(&self, handle: &mut SessionHandle, frame: &Frame) -> Result<(), StoreError> {
        std::thread::sleep(self.delay);
        self.inner.append_frame(handle, frame)
    }

    fn persist(&self, out: &FrameOutput) -> Result<(), PipelineError> {
        self.inner.persist(out)
    }

    fn record_event(&self, session_id: &str, event: &StateEvent) -> Result<(), StoreError> {
        self.inner.record_event(session_id, event)
    }
}

#[test]
fn slow_storage_does_not_slow_composites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let storage = Arc::new(SlowStorage {
        inner: DiskStorage::new(SessionStore::open(dir.path()).unwrap()),
        delay: Duration::from_millis(80),
    });
    let srv = start_with(cfg, Some(storage));
    let (m, frames) = manifest("slow-disk", 20);
    let mv = serde_json::to_value(&m).unwrap();
    assert_eq!(http_send(&srv, "POST", "/sessions", &mv).0, 201);

    let mut viewer = Client::connect(&srv, "slow-disk");
    let viewer_thread = std::thread::spawn(move || {
        let mut arrivals = Vec::new();
        while arrivals.len() < 20 {
            match viewer.recv_timeout(Duration::from_secs(10)) {
                Some(e) if e.msg_type == MessageType::Composite => {
                    arrivals.push((e.header["frame_index"].as_u64().unwrap(), Instant::now()))
                }
                Some(_) => {}
                None => break,
            }
        }
        arrivals
    });
    std::thread::sleep(Duration::from_millis(100));

    let mut producer = Client::connect(&srv, "slow-disk");
    let start = Instant::now();
    for (i, f) in frames.iter().enumerate() {
        let due = start + Duration::from_secs_f64(i as f64 / 30.0);
        std::thread::sleep(due.saturating_duration_since(Instant::now()));
        producer.send(&frame_envelope(f).unwrap());
        assert_eq!(producer.recv().msg_type, MessageType::Ack);
    }
    let sent = start.elapsed();
    let arrivals = viewer_thread.join().unwrap();
    assert_eq!(arrivals.len(), 20, "every frame composited");
    let last = arrivals.last().unwrap().1 - start;
    // storage alone needs 20 × 80 ms = 1.6 s
    assert!(last < sent + Duration::from_millis(400), "last composite at {last:?}, capture ended at {sent:?}");
    let indices: Vec<u64> = arrivals.iter().map(|a| a.0).collect();
    assert_eq!(indices, (0..20).collect::<Vec<_>>());

    producer.send(&Envelope::end());
    assert_eq!(producer.recv().msg_type, MessageType::End);
    assert_eq!(srv.state.store.frame_count("slow-disk").unwrap(), 20);
    let (_, stats) = http_get(&srv, "/sessions/slow-disk/stats");
    let stats = json(&stats);
    assert_eq!((stats["frames_stored"].as_u64(), stats["storage_failures"].as_u64()), (Some(20), Some(0)));
}

struct SlowModel(Duration);

impl InferenceBackend for SlowModel {
    fn infer(&self, frame: &Frame, _: &SessionManifest) -> Result<Prediction, GatewayError> {
        std::thread::sleep(self.0);
        Ok(Prediction::Depth(frame.depth.clone()))
    }
}

#[test]
fn backpressure_drops_oldest_frames_without_reordering() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.queue_bound = 2;
    let srv = start_with(cfg, None);
    srv.state
        .registry
        .register_backend("slow", ModelKind::Depth, 5000, Arc::new(SlowModel(Duration::from_millis(40))))
        .unwrap();
    let (m, frames) = manifest("pressure", 30);
    assert_eq!(http_send(&srv, "POST", "/sessions", &serde_json::to_value(&m).unwrap()).0, 201);
    let proto = json!({"protocol_id": "slow", "entries": [{"model_id": "slow", "task": "object_rendering"}]});
    assert_eq!(http_send(&srv, "PUT", "/sessions/pressure/protocol", &proto).0, 200);

    let mut viewer = Client::connect(&srv, "pressure");
    let mut producer = Client::connect(&srv, "pressure");
    let runtime = srv.state.loaded_runtime("pressure").unwrap();
    let mut max_queue = 0;
    for f in &frames {
        producer.send(&frame_envelope(f).unwrap());
        assert_eq!(producer.recv().msg_type, MessageType::Ack);
        max_queue = max_queue.max(tokio_free_queue_len(&srv));
    }
    producer.send(&Envelope::end());
    assert_eq!(producer.recv().msg_type, MessageType::End);

    let c = runtime.counters();
    let (received, processed, dropped) = (
        c.frames_received.load(Ordering::SeqCst),
        c.frames_processed.load(Ordering::SeqCst),
        c.frames_dropped.load(Ordering::SeqCst),
    );
    assert_eq!(received, 30);
    assert_eq!(processed + dropped, 30);
    assert!(dropped > 0, "a 40 ms model cannot keep up with unpaced capture");
    assert!(max_queue <= 2, "queue held {max_queue} frames");
    assert_eq!(srv.state.store.frame_count("pressure").unwrap(), 30, "raw frames are never dropped");

    let mut seen = Vec::new();
    while let Some(e) = viewer.recv_timeout(Duration::from_millis(500)) {
        if e.msg_type == MessageType::Composite {
            seen.push(e.header["frame_index"].as_u64().unwrap());
        }
    }
    assert_eq!(seen.len() as u64, processed);
    assert!(seen.windows(2).all(|w| w[0] < w[1]), "{seen:?}");
    assert_eq!(*seen.last().unwrap(), 29, "the newest frame survives");
}

fn tokio_free_queue_len(srv: &areval_server::ServerHandle) -> u64 {
    let (_, stats) = http_get(srv, "/sessions/pressure/stats");
    json(&stats)["queue_len"].as_u64().unwrap()
}

#[test]
fn controls_are_recorded_at_the_frame_they_apply_to() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path());
    let (m, frames) = manifest("ctl", 4);
    assert_eq!(http_send(&srv, "POST", "/sessions", &serde_json::to_value(&m).unwrap()).0, 201);
    let proto = json!({"protocol_id": "occl", "entries": [{"model_id": "sensor-passthrough", "task": "occlusion_plane"}]});
    assert_eq!(http_send(&srv, "PUT", "/sessions/ctl/protocol", &proto).0, 200);
    let cmd = json!({"command": "set_plane_depth", "session_id": "ctl", "depth_m": 0.75});
    let (status, ack) = http_send(&srv, "POST", "/sessions/ctl/control", &cmd);
    assert_eq!((status, ack["command"].as_str()), (200, Some("set_plane_depth")));

    let mut producer = Client::connect(&srv, "ctl");
    for f in frames {
        producer.send(&frame_envelope(&f).unwrap());
        assert_eq!(producer.recv().msg_type, MessageType::Ack);
    }
    producer.send(&Envelope::end());
    producer.recv_type(MessageType::End);
    let events: Vec<StateEvent> = srv.state.store.read_events("ctl").unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].frame_index, 0);
    assert_eq!(events[0].command, serde_json::from_value::<ControlCommand>(cmd).unwrap());
    let (status, body) = http_get(&srv, "/sessions/ctl/metrics?model=sensor-passthrough");
    assert_eq!((status, json(&body)["code"].as_str()), (404, Some("NoSuchResult")), "protocol asked for no metrics");
    // composites landed on disk under the occlusion task
    let png = srv.state.store.composite_path("ctl", "sensor-passthrough", areval_core::model::TaskKind::OcclusionPlane, 3);
    assert!(png.exists(), "{}", png.display());
}

#[test]
fn frame_by_frame_seek_and_video_replay() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path());
    let (m, frames) = manifest("seek", 5);
    produce(&srv, &m, frames);

    let mut viewer = Client::connect(&srv, "seek");
    let mode = ControlCommand::ReplayMode {
        session_id: "seek".into(),
        mode: ReplayMode::FrameByFrame,
        fps: 30.0,
    };
    viewer.send(&mode.to_envelope());
    assert_eq!(viewer.recv_type(MessageType::Ack).header["command"], "replay_mode");

    viewer.send(&ControlCommand::ReplaySeek { session_id: "seek".into(), frame_index: 2 }.to_envelope());
    let comp = viewer.recv_type(MessageType::Composite);
    assert_eq!(comp.header["frame_index"], 2);
    assert_eq!(viewer.recv_type(MessageType::Ack).header["frame_index"], 2);

    viewer.send(&ControlCommand::ReplaySeek { session_id: "seek".into(), frame_index: 9 }.to_envelope());
    let e = viewer.recv_type(MessageType::Error);
    assert_eq!(e.header["code"], "OutOfRange");

    viewer.send(&ControlCommand::ReplaySeek { session_id: "other".into(), frame_index: 0 }.to_envelope());
    assert_eq!(viewer.recv_type(MessageType::Error).header["code"], "InvalidControl");

    let video = ControlCommand::ReplayMode {
        session_id: "seek".into(),
        mode: ReplayMode::Video,
        fps: 50.0,
    };
    viewer.send(&video.to_envelope());
    let mut got = Vec::new();
    while got.len() < 2 {
        let e = viewer.recv();
        if e.msg_type == MessageType::Composite {
            got.push(e.header["frame_index"].as_u64().unwrap());
        }
    }
    assert_eq!(got, vec![3, 4], "video resumes after the last seek");
}

#[test]
fn rest_replay_and_frame_download() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path());
    let (m, frames) = manifest("rp", 3);
    produce(&srv, &m, frames.clone());

    let (status, body) = http_get(&srv, "/sessions/rp/frames/1");
    assert_eq!(status, 200);
    let body = json(&body);
    let png = areval_core::wire::decode_rest_image(body["rgb_png"].as_str().unwrap()).unwrap();
    assert_eq!(areval_core::imageio::decode_png(&png).unwrap(), frames[1].rgb);
    let raw = areval_core::wire::decode_rest_image(body["depth_raw16"].as_str().unwrap()).unwrap();
    assert_eq!(raw, frames[1].depth.to_le_bytes());

    let (status, summary) = http_send(&srv, "POST", "/sessions/rp/replay", &json!({"mode": "unpaced"}));
    assert_eq!(status, 200, "{summary}");
    assert_eq!((summary["frames"].as_u64(), summary["errors"].as_u64()), (Some(3), Some(0)));
    let (status, body) = http_send(&srv, "POST", "/sessions/rp/replay", &json!({"mode": "sideways"}));
    assert_eq!((status, body["code"].as_str()), (400, Some("InvalidControl")));
    let (status, _) = http_send(&srv, "POST", "/sessions/rp/replay", &json!({"protocol_id": "missing"}));
    assert_eq!(status, 404);

    let (status, pcd) = http_get(&srv, "/sessions/rp/pointcloud/0?stride=4");
    assert_eq!(status, 200);
    let cloud = areval_core::pointcloud::parse_pcd(&pcd).unwrap();
    assert!(cloud.len() >= (32 / 4) * (24 / 4), "{} points", cloud.len());
}
