//! HTTP client for models served behind the `/infer` JSON contract.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use ureq::Agent;

use super::{GatewayError, InferenceBackend, ModelKind, Prediction};
use crate::imageio::{decode_env_pfm, encode_png_with, PngSpeed};
use crate::model::{CameraIntrinsics, DepthMap, Frame, SessionManifest};
use crate::wire::{decode_rest_image, encode_rest_image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRequest {
    pub task_kind: ModelKind,
    /// Base64 PNG.
    pub rgb: String,
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub extras: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDepth {
    /// Base64 of little-endian u16 millimeters, row-major.
    pub data: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEnvMap {
    /// Base64 PFM.
    pub data: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<WireDepth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_map: Option<WireEnvMap>,
}

impl InferResponse {
    pub fn into_prediction(self, kind: ModelKind) -> Result<Prediction, GatewayError> {
        let mismatch = |m: String| GatewayError::SchemaMismatch(m);
        match kind {
            ModelKind::Depth => {
                let d = self.depth.ok_or_else(|| mismatch("response has no depth field".into()))?;
                if d.width == 0 || d.height == 0 {
                    return Err(mismatch(format!("depth dimensions {}x{} must be positive", d.width, d.height)));
                }
                let bytes = decode_rest_image(&d.data).map_err(|e| mismatch(e.to_string()))?;
                DepthMap::from_le_bytes(d.width, d.height, &bytes)
                    .map(Prediction::Depth)
                    .map_err(|e| mismatch(e.to_string()))
            }
            ModelKind::Lighting => {
                let e = self.env_map.ok_or_else(|| mismatch("response has no env_map field".into()))?;
                let bytes = decode_rest_image(&e.data).map_err(|e| mismatch(e.to_string()))?;
                let map = decode_env_pfm(&bytes).map_err(|e| mismatch(e.to_string()))?;
                if (map.width(), map.height()) != (e.width, e.height) {
                    return Err(mismatch(format!(
                        "env map is {}x{}, response says {}x{}",
                        map.width(),
                        map.height(),
                        e.width,
                        e.height
                    )));
                }
                Ok(Prediction::Lighting(map))
            }
        }
    }
}

pub struct RemoteModel {
    model_id: String,
    infer_url: String,
    kind: ModelKind,
    timeout_ms: u64,
    agent: Agent,
}

fn agent(timeout_ms: u64) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn parse_base(base_url: &str) -> Result<url::Url, GatewayError> {
    let url = url::Url::parse(base_url).map_err(|e| GatewayError::BadDescriptor(format!("base_url {base_url:?}: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(GatewayError::BadDescriptor(format!("base_url {base_url:?} must be an http(s) URL")));
    }
    Ok(url)
}

fn endpoint(base_url: &str, path: &str) -> Result<String, GatewayError> {
    let url = parse_base(base_url)?;
    Ok(format!("{}/{path}", url.as_str().trim_end_matches('/')))
}

impl RemoteModel {
    pub fn new(model_id: &str, base_url: &str, kind: ModelKind, timeout_ms: u64) -> Result<Self, GatewayError> {
        Ok(RemoteModel {
            model_id: model_id.to_string(),
            infer_url: endpoint(base_url, "infer")?,
            kind,
            timeout_ms,
            agent: agent(timeout_ms),
        })
    }

    fn transport_error(&self, e: ureq::Error) -> GatewayError {
        match e {
            ureq::Error::Timeout(_) => GatewayError::ModelTimeout {
                model_id: self.model_id.clone(),
                timeout_ms: self.timeout_ms,
            },
            other => GatewayError::ModelError {
                model_id: self.model_id.clone(),
                message: other.to_string(),
            },
        }
    }
}

const EXCERPT_CHARS: usize = 200;

impl InferenceBackend for RemoteModel {
    fn infer(&self, frame: &Frame, manifest: &SessionManifest) -> Result<Prediction, GatewayError> {
        let png = encode_png_with(&frame.rgb, PngSpeed::Fast).map_err(|e| GatewayError::SchemaMismatch(e.to_string()))?;
        let req = InferRequest {
            task_kind: self.kind,
            rgb: encode_rest_image(&png).map_err(|e| GatewayError::SchemaMismatch(e.to_string()))?,
            intrinsics: manifest.intrinsics,
            extras: Map::new(),
        };
        let mut resp = self
            .agent
            .post(&self.infer_url)
            .send_json(&req)
            .map_err(|e| self.transport_error(e))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(512 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| self.transport_error(e))?;
        if !(200..300).contains(&status) {
            let excerpt: String = body.chars().take(EXCERPT_CHARS).collect();
            return Err(GatewayError::ModelError {
                model_id: self.model_id.clone(),
                message: format!("HTTP {status}: {excerpt}"),
            });
        }
        let parsed: InferResponse = serde_json::from_str(&body).map_err(|e| GatewayError::ModelError {
            model_id: self.model_id.clone(),
            message: format!("malformed response: {e}"),
        })?;
        parsed.into_prediction(self.kind)
    }
}

/// `GET {base_url}/health`; true when the service answers 2xx with
/// `{"status":"ok"}`.
pub fn health(base_url: &str, timeout_ms: u64) -> Result<bool, GatewayError> {
    let url = endpoint(base_url, "health")?;
    let mut resp = match agent(timeout_ms).get(&url).call() {
        Ok(r) => r,
        Err(_) => return Ok(false),
    };
    if !resp.status().is_success() {
        return Ok(false);
    }
    let v: Value = match resp.body_mut().read_json() {
        Ok(v) => v,
        Err(_) => return Ok(false),
    };
    Ok(v.get("status").and_then(Value::as_str) == Some("ok"))
}
