//! Python module `areval`. Thin wrappers over the core crate so Python model
//! adapters and tools speak the same envelope, depth, PCD and `/infer`
//! formats as the server.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use areval_core::gateway::{InferRequest, InferResponse, WireDepth};
use areval_core::metrics::depth_metrics as core_depth_metrics;
use areval_core::model::DepthMap;
use areval_core::pointcloud::{encode_pcd as core_encode_pcd, parse_pcd as core_parse_pcd, ColoredPointSet};
use areval_core::wire::{self, decode_rest_image, encode_rest_image, Envelope, MessageType};

create_exception!(areval, WireError, PyValueError);

fn wire_err(e: wire::WireError) -> PyErr {
    WireError::new_err(format!("{}: {e}", e.code()))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Encodes an envelope. `header` is a JSON object string.
#[pyfunction]
fn encode_envelope<'py>(py: Python<'py>, msg_type: u8, header: &str, payloads: Vec<Vec<u8>>) -> PyResult<Bound<'py, PyBytes>> {
    let t = MessageType::try_from(msg_type).map_err(wire_err)?;
    let header: serde_json::Value = serde_json::from_str(header).map_err(value_err)?;
    let bytes = Envelope::new(t, header, payloads).encode().map_err(wire_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Returns `(msg_type, header_json, payloads)`. The header comes back with
/// sorted keys, as on the wire.
#[pyfunction]
fn decode_envelope<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(u8, String, Vec<Bound<'py, PyBytes>>)> {
    let env = Envelope::decode(data).map_err(wire_err)?;
    let header = serde_json::to_string(&env.header).map_err(value_err)?;
    let payloads = env.payloads.iter().map(|p| PyBytes::new(py, p)).collect();
    Ok((env.msg_type as u8, header, payloads))
}

fn depth(width: u32, height: u32, raw: &[u8]) -> PyResult<DepthMap> {
    DepthMap::from_le_bytes(width, height, raw).map_err(value_err)
}

/// Depth metrics over raw little-endian u16 millimeter buffers.
#[pyfunction]
fn depth_metrics<'py>(py: Python<'py>, pred: &[u8], gt: &[u8], width: u32, height: u32) -> PyResult<Bound<'py, PyDict>> {
    let r = core_depth_metrics(&depth(width, height, pred)?, &depth(width, height, gt)?).map_err(value_err)?;
    let d = PyDict::new(py);
    for id in areval_core::metrics::DEPTH_METRIC_IDS {
        d.set_item(id, r.get(id))?;
    }
    d.set_item("valid_pixel_count", r.valid_pixel_count)?;
    Ok(d)
}

#[pyfunction]
fn encode_pcd<'py>(py: Python<'py>, points: Vec<[f32; 3]>, colors: Vec<[u8; 3]>) -> PyResult<Bound<'py, PyBytes>> {
    if points.len() != colors.len() {
        return Err(PyValueError::new_err(format!("{} points but {} colors", points.len(), colors.len())));
    }
    Ok(PyBytes::new(py, &core_encode_pcd(&ColoredPointSet { points, colors })))
}

/// Returns `(points, colors)` as lists of 3-tuples.
#[pyfunction]
fn parse_pcd(data: &[u8]) -> PyResult<(Vec<(f32, f32, f32)>, Vec<(u8, u8, u8)>)> {
    let c = core_parse_pcd(data).map_err(value_err)?;
    Ok((
        c.points.iter().map(|p| (p[0], p[1], p[2])).collect(),
        c.colors.iter().map(|c| (c[0], c[1], c[2])).collect(),
    ))
}

/// Parses an `/infer` request body into a dict with `task_kind`,
/// `rgb_png` (bytes), `intrinsics` (dict) and `extras_json`.
#[pyfunction]
fn parse_infer_request<'py>(py: Python<'py>, body: &str) -> PyResult<Bound<'py, PyDict>> {
    let req: InferRequest = serde_json::from_str(body).map_err(value_err)?;
    let png = decode_rest_image(&req.rgb).map_err(wire_err)?;
    let k = req.intrinsics;
    let intr = PyDict::new(py);
    intr.set_item("fx", k.fx)?;
    intr.set_item("fy", k.fy)?;
    intr.set_item("cx", k.cx)?;
    intr.set_item("cy", k.cy)?;
    intr.set_item("width", k.width)?;
    intr.set_item("height", k.height)?;
    let d = PyDict::new(py);
    let kind = serde_json::to_value(req.task_kind).map_err(value_err)?;
    d.set_item("task_kind", kind.as_str().unwrap_or_default())?;
    d.set_item("rgb_png", PyBytes::new(py, &png))?;
    d.set_item("intrinsics", intr)?;
    d.set_item("extras_json", serde_json::to_string(&req.extras).map_err(value_err)?)?;
    Ok(d)
}

/// Builds an `/infer` response body for a depth prediction given as raw
/// little-endian u16 millimeters.
#[pyfunction]
#[pyo3(signature = (model_id, depth_mm, width, height, latency_ms=None))]
fn depth_response(model_id: &str, depth_mm: &[u8], width: u32, height: u32, latency_ms: Option<f64>) -> PyResult<String> {
    depth(width, height, depth_mm)?;
    let resp = InferResponse {
        model_id: Some(model_id.to_string()),
        latency_ms,
        depth: Some(WireDepth {
            data: encode_rest_image(depth_mm).map_err(wire_err)?,
            width,
            height,
        }),
        env_map: None,
    };
    serde_json::to_string(&resp).map_err(value_err)
}

#[pymodule]
pub fn areval(m: &Bound<'_, PyModule>) -> PyResult<()> {
    for (name, t) in [
        ("MSG_INIT", MessageType::Init),
        ("MSG_FRAME", MessageType::Frame),
        ("MSG_ACK", MessageType::Ack),
        ("MSG_COMPOSITE", MessageType::Composite),
        ("MSG_CONTROL", MessageType::Control),
        ("MSG_POINTCLOUD", MessageType::PointCloud),
        ("MSG_ERROR", MessageType::Error),
        ("MSG_END", MessageType::End),
    ] {
        m.add(name, t as u8)?;
    }
    m.add("WireError", m.py().get_type::<WireError>())?;
    m.add_function(wrap_pyfunction!(encode_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(decode_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(depth_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(encode_pcd, m)?)?;
    m.add_function(wrap_pyfunction!(parse_pcd, m)?)?;
    m.add_function(wrap_pyfunction!(parse_infer_request, m)?)?;
    m.add_function(wrap_pyfunction!(depth_response, m)?)?;
    Ok(())
}
