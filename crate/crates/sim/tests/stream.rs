use std::time::Instant;

use areval_core::store::SessionStore;
use areval_core::synthetic::{SceneKind, SyntheticSpec};
use areval_server::{AppState, ServerConfig, ServerHandle};
use areval_sim::{generate, stream_session, SimError, StreamOptions};

fn server(root: &std::path::Path) -> ServerHandle {
    let config = ServerConfig {
        bind_address: "127.0.0.1:0".into(),
        storage_root: root.to_path_buf(),
        ..ServerConfig::default()
    };
    ServerHandle::start(AppState::new(config).unwrap()).unwrap()
}

#[test]
fn streams_a_session_with_deadline_pacing() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let id = generate(src.path(), &SyntheticSpec::new(SceneKind::Ramp, 6, 32, 24)).unwrap();
    let srv = server(dst.path());
    let opts = StreamOptions::new(src.path(), &id, &format!("ws://{}", srv.addr), 50.0);
    let t = Instant::now();
    let stats = stream_session(&opts).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    assert_eq!(stats.frames_sent, 6);
    assert_eq!(stats.acks_received, 7);
    assert!(stats.bytes_sent > 6 * 32 * 24 * 2);
    // five gaps of 20 ms
    assert!((stats.mean_interframe_ms - 20.0).abs() < 5.0, "{}", stats.mean_interframe_ms);
    assert!(elapsed >= 0.1, "{elapsed}");

    let a = SessionStore::open(src.path()).unwrap();
    let b = SessionStore::open(dst.path()).unwrap();
    assert_eq!(b.frame_count(&id).unwrap(), 6);
    for i in 0..6 {
        assert_eq!(a.load_frame(&id, i).unwrap(), b.load_frame(&id, i).unwrap());
    }
}

#[test]
fn loops_continue_frame_indices() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let id = generate(src.path(), &SyntheticSpec::new(SceneKind::Step, 3, 16, 12)).unwrap();
    let srv = server(dst.path());
    let mut opts = StreamOptions::new(src.path(), &id, &format!("ws://{}", srv.addr), 200.0);
    opts.passes = 2;
    opts.target_session = Some("looped".into());
    let stats = stream_session(&opts).unwrap();
    assert_eq!(stats.frames_sent, 6);
    let b = SessionStore::open(dst.path()).unwrap();
    assert_eq!(b.frame_count("looped").unwrap(), 6);
    let a = SessionStore::open(src.path()).unwrap();
    assert_eq!(b.load_frame("looped", 4).unwrap().depth, a.load_frame(&id, 1).unwrap().depth);
}

#[test]
fn reports_refused_connections_bad_layouts_and_server_errors() {
    let src = tempfile::tempdir().unwrap();
    let id = generate(src.path(), &SyntheticSpec::new(SceneKind::Ramp, 2, 16, 12)).unwrap();

    // a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let opts = StreamOptions::new(src.path(), &id, &format!("ws://127.0.0.1:{port}"), 30.0);
    assert!(matches!(stream_session(&opts), Err(SimError::ConnectionRefused { .. })));

    let missing = StreamOptions::new(src.path(), "nope", "ws://127.0.0.1:1", 30.0);
    assert!(matches!(stream_session(&missing), Err(SimError::LayoutError(_))));

    let dst = tempfile::tempdir().unwrap();
    let srv = server(dst.path());
    let opts = StreamOptions::new(src.path(), &id, &format!("ws://{}", srv.addr), 100.0);
    stream_session(&opts).unwrap();
    match stream_session(&opts) {
        Err(SimError::ProtocolError { code, .. }) => assert_eq!(code, "DuplicateSession"),
        other => panic!("expected DuplicateSession, got {other:?}"),
    }
}
