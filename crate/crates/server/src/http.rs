use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use areval_core::gateway::{ModelDescriptor, Prediction};
use areval_core::model::{validate_manifest, ExperimentProtocol, SessionManifest};
use areval_core::pipeline::{validate_protocol, FrameProcessor, Pacing, ReplayOptions};
use areval_core::pointcloud::encode_pcd;
use areval_core::wire::{encode_rest_image, ControlCommand};

use crate::error::ApiError;
use crate::AppState;

type App = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

pub fn routes() -> Router<Arc<AppState>> {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/frames/{n}", get(get_frame))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/protocol", put(set_session_protocol).get(get_session_protocol))
        .route("/sessions/{id}/pointcloud/{n}", get(get_pointcloud))
        .route("/sessions/{id}/replay", post(start_replay))
        .route("/sessions/{id}/control", post(post_control))
        .route("/sessions/{id}/stats", get(get_stats))
        .route("/models", post(register_model).get(list_models))
        .route("/protocols", post(create_protocol).get(list_protocols))
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes, what: &str) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("MalformedRequest", format!("invalid {what}: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(State(app): App, body: Bytes) -> ApiResult<Response> {
    let m: SessionManifest = parse_json(&body, "manifest")?;
    if let Err(v) = validate_manifest(&m) {
        return Err(ApiError::bad_request("InvalidManifest", format!("{}: {}", v.field, v.message)));
    }
    app.store.begin_session(&m)?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": m.session_id }))).into_response())
}

async fn list_sessions(State(app): App) -> ApiResult<Json<Value>> {
    let mut out = Vec::new();
    for id in app.store.list_sessions()? {
        let count = app.store.frame_count(&id)?;
        out.push(json!({ "session_id": id, "frame_count": count }));
    }
    Ok(Json(Value::Array(out)))
}

async fn get_session(State(app): App, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let manifest = app.store.load_manifest(&id)?;
    let index = app.store.load_index(&id)?;
    Ok(Json(json!({
        "manifest": *manifest,
        "frame_count": index.frame_count,
        "first_ts": index.first_ts,
        "last_ts": index.last_ts,
    })))
}

/// Stored bytes as Base64: the lossless PNG and the raw16 depth buffer.
async fn get_frame(State(app): App, Path((id, n)): Path<(String, u64)>) -> ApiResult<Json<Value>> {
    let [rgb, depth, meta] = app.store.frame_paths(&id, n)?;
    let read = |p: &std::path::Path| {
        std::fs::read(p).map_err(|e| ApiError::from(areval_core::store::StoreError::StorageUnavailable(e)))
    };
    let meta: Value = serde_json::from_slice(&read(&meta)?)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Malformed", e.to_string()))?;
    let manifest = app.store.load_manifest(&id)?;
    Ok(Json(json!({
        "session_id": id,
        "index": n,
        "meta": meta,
        "rgb_png": encode_rest_image(&read(&rgb)?).map_err(|e| ApiError::bad_request("Malformed", e.to_string()))?,
        "depth_raw16": encode_rest_image(&read(&depth)?).map_err(|e| ApiError::bad_request("Malformed", e.to_string()))?,
        "depth_resolution": manifest.depth_resolution,
    })))
}

#[derive(Deserialize)]
struct ModelQuery {
    model: Option<String>,
    stride: Option<u32>,
}

async fn get_metrics(State(app): App, Path(id): Path<String>, Query(q): Query<ModelQuery>) -> ApiResult<Response> {
    app.store.load_manifest(&id)?;
    let model = q.model.ok_or_else(|| ApiError::bad_request("MalformedRequest", "query parameter model is required"))?;
    let text = app.store.read_metrics(&id, &model)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn get_session_protocol(State(app): App, Path(id): Path<String>) -> ApiResult<Json<ExperimentProtocol>> {
    Ok(Json(app.runtime(&id)?.protocol()))
}

async fn set_session_protocol(State(app): App, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let runtime = app.runtime(&id)?;
    let p = protocol_from_body(&app, &body)?;
    validate_protocol(&p, &app.registry)?;
    let pid = p.protocol_id.clone();
    runtime.set_protocol(p);
    runtime.reset_replay();
    Ok(Json(json!({ "session_id": id, "protocol_id": pid })))
}

/// Accepts either a full protocol or `{"protocol_id": ...}` naming a posted one.
fn protocol_from_body(app: &AppState, body: &Bytes) -> ApiResult<ExperimentProtocol> {
    let v: Value = parse_json(body, "protocol")?;
    if v.get("entries").is_none() {
        if let Some(id) = v.get("protocol_id").and_then(Value::as_str) {
            return app
                .protocol(id)
                .ok_or_else(|| ApiError::not_found("UnknownProtocol", format!("no protocol {id:?}")));
        }
    }
    serde_json::from_value(v).map_err(|e| ApiError::bad_request("InvalidProtocol", e.to_string()))
}

async fn get_pointcloud(State(app): App, Path((id, n)): Path<(String, u64)>, Query(q): Query<ModelQuery>) -> ApiResult<Response> {
    let model = q.model.unwrap_or_else(|| crate::PASSTHROUGH_MODEL.to_string());
    let stride = q.stride.unwrap_or(2);
    if stride == 0 {
        return Err(ApiError::bad_request("InvalidProtocol", "stride must be a positive integer"));
    }
    let bytes = blocking(move || {
        let manifest = app.store.load_manifest(&id)?;
        let frame = Arc::new(app.store.load_frame(&id, n)?);
        let out = app.registry.infer(&model, &frame, &manifest)?;
        let Prediction::Depth(depth) = out.prediction else {
            return Err(ApiError::bad_request("InvalidProtocol", format!("model {model} does not predict depth")));
        };
        let mut p = FrameProcessor::new(manifest, app.registry.clone(), app.config.asset_root.as_deref())?;
        let cloud = p
            .point_cloud(&frame, &depth, stride)
            .map_err(|e| ApiError::bad_request("PointCloudError", e.to_string()))?;
        Ok(encode_pcd(&cloud))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplayRequest {
    protocol_id: Option<String>,
    protocol: Option<ExperimentProtocol>,
    #[serde(default = "default_mode")]
    mode: String,
    fps: Option<f64>,
    #[serde(default = "yes")]
    persist: bool,
    #[serde(default = "yes")]
    wait: bool,
    #[serde(default = "yes")]
    apply_recorded_events: bool,
    first_frame: Option<u64>,
    last_frame: Option<u64>,
}

fn default_mode() -> String {
    "unpaced".into()
}

fn yes() -> bool {
    true
}

/// Replays a stored session. `mode` is `unpaced` or `video` (with `fps`).
/// With `wait` the response carries the summary, otherwise 202 is returned
/// and outputs only go to subscribers and storage.
async fn start_replay(State(app): App, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let runtime = app.runtime(&id)?;
    let req: ReplayRequest = if body.is_empty() { parse_json(&Bytes::from_static(b"{}"), "replay request")? } else { parse_json(&body, "replay request")? };
    let protocol = match (req.protocol, req.protocol_id) {
        (Some(p), _) => p,
        (None, Some(pid)) => app
            .protocol(&pid)
            .ok_or_else(|| ApiError::not_found("UnknownProtocol", format!("no protocol {pid:?}")))?,
        (None, None) => runtime.protocol(),
    };
    validate_protocol(&protocol, &app.registry)?;
    let pacing = match req.mode.as_str() {
        "unpaced" => Pacing::Unpaced,
        "video" => {
            let fps = req.fps.unwrap_or(30.0);
            if !(fps > 0.0 && fps.is_finite()) {
                return Err(ApiError::bad_request("InvalidControl", format!("fps must be > 0, got {fps}")));
            }
            Pacing::Video { fps }
        }
        other => return Err(ApiError::bad_request("InvalidControl", format!("unknown replay mode {other:?}"))),
    };
    let options = ReplayOptions {
        pacing,
        persist: req.persist,
        apply_recorded_events: req.apply_recorded_events,
        first_frame: req.first_frame.unwrap_or(0),
        last_frame: req.last_frame,
        ..ReplayOptions::default()
    };
    let protocol_id = protocol.protocol_id.clone();
    let job = {
        let (app, runtime) = (app.clone(), runtime.clone());
        move || -> ApiResult<Value> {
            let s = runtime.run_replay(&app, &protocol, &options)?;
            Ok(json!({
                "session_id": runtime.session_id,
                "protocol_id": protocol_id,
                "frames": s.frames,
                "composites": s.composites,
                "errors": s.errors,
                "elapsed_ms": s.elapsed.as_secs_f64() * 1000.0,
                "fps": s.fps(),
            }))
        }
    };
    if req.wait {
        let summary = blocking(job).await?;
        Ok(Json(summary).into_response())
    } else {
        tokio::task::spawn_blocking(move || {
            if let Err(e) = job() {
                log::error!("background replay failed: {}: {}", e.code, e.message);
            }
        });
        Ok((StatusCode::ACCEPTED, Json(json!({ "session_id": id, "status": "started" }))).into_response())
    }
}

/// CONTROL over REST, same semantics as the WebSocket message.
async fn post_control(State(app): App, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let runtime = app.runtime(&id)?;
    let cmd: ControlCommand = parse_json(&body, "control command")?;
    if cmd.session_id() != id {
        return Err(ApiError::bad_request("InvalidControl", format!("command addresses session {:?}", cmd.session_id())));
    }
    let ack = blocking(move || crate::ws::apply_control(&app, &runtime, cmd).map_err(ApiError::from)).await?;
    Ok(Json(ack))
}

async fn get_stats(State(app): App, Path(id): Path<String>) -> ApiResult<Json<crate::RuntimeStats>> {
    let runtime = app.runtime(&id)?;
    Ok(Json(runtime.stats().await))
}

async fn register_model(State(app): App, body: Bytes) -> ApiResult<Response> {
    let mut v: Value = parse_json(&body, "model descriptor")?;
    if let Some(obj) = v.as_object_mut() {
        obj.entry("timeout_ms").or_insert(json!(app.config.default_timeout_ms));
    }
    let d: ModelDescriptor = serde_json::from_value(v).map_err(|e| ApiError::bad_request("MalformedRequest", format!("invalid model descriptor: {e}")))?;
    let model_id = d.model_id.clone();
    // remote registration probes the model, keep it off the runtime threads
    blocking(move || app.registry.register(d).map_err(ApiError::from)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "model_id": model_id }))).into_response())
}

async fn list_models(State(app): App) -> Json<Vec<ModelDescriptor>> {
    Json(app.registry.descriptors())
}

async fn create_protocol(State(app): App, body: Bytes) -> ApiResult<Response> {
    let p: ExperimentProtocol = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("InvalidProtocol", e.to_string()))?;
    validate_protocol(&p, &app.registry)?;
    let pid = p.protocol_id.clone();
    if !app.add_protocol(p) {
        return Err(ApiError::new(StatusCode::CONFLICT, "DuplicateProtocol", format!("protocol {pid:?} already exists")));
    }
    Ok((StatusCode::CREATED, Json(json!({ "protocol_id": pid }))).into_response())
}

async fn list_protocols(State(app): App) -> Json<Vec<ExperimentProtocol>> {
    Json(app.protocols())
}
