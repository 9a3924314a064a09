use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::json;

use super::{entry_error_envelope, param_f64, param_str, InteractiveState, PipelineError};
use crate::gateway::{GatewayError, ModelRegistry, Prediction};
use crate::imageio::{decode_env_pfm, encode_png_with, PngSpeed};
use crate::lighting::{render_probe, view_dir, EnvShader, ProbeMaterial, ProbeRender};
use crate::metrics::{depth_metrics_resampled, lighting_report, LightingTarget, MetricRow};
use crate::model::{
    depth_m_to_mm, DepthMap, EnvironmentMap, ExperimentProtocol, Frame, ProtocolEntry, RgbImage, SessionManifest, TaskKind,
};
use crate::pointcloud::{encode_pcd, unproject, virtual_to_points, ColoredPointSet, PointCloudError};
use crate::render::{composite, render_occlusion_plane, RenderError, RenderLayer, Renderer};
use crate::wire::{composite_envelope, CompositeHeader, ControlCommand, Envelope, MessageType};

const DEFAULT_PLANE_DEPTH_M: f64 = 1.0;
const DEFAULT_STRIDE: u32 = 2;
const DEFAULT_PROBE_RESOLUTION: u32 = 64;
const PLANE_COLOR: [u8; 3] = [0, 0, 0];

/// Result of one protocol entry on one frame.
#[derive(Debug, Clone)]
pub struct EntryOutput {
    pub entry_index: usize,
    pub model_id: String,
    pub task: TaskKind,
    /// COMPOSITE, POINTCLOUD or ERROR.
    pub envelope: Envelope,
    pub metrics: Vec<MetricRow>,
}

impl EntryOutput {
    pub fn is_error(&self) -> bool {
        self.envelope.msg_type == MessageType::Error
    }

    /// PNG bytes of a successful composite.
    pub fn composite_png(&self) -> Option<&[u8]> {
        match self.envelope.msg_type {
            MessageType::Composite => self.envelope.payloads.first().map(Vec::as_slice),
            _ => None,
        }
    }
}

/// Everything produced for one frame, in protocol order.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub session_id: String,
    pub frame_index: u64,
    /// Successful predictions of the entry models, in first-use order.
    pub predictions: Vec<(String, Prediction)>,
    pub entries: Vec<EntryOutput>,
    pub elapsed_ms: f64,
}

impl FrameOutput {
    pub fn envelopes(&self) -> impl Iterator<Item = &Envelope> {
        self.entries.iter().map(|e| &e.envelope)
    }

    pub fn metric_rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.entries.iter().flat_map(|e| e.metrics.iter())
    }
}

struct Failure {
    code: &'static str,
    message: String,
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        Failure {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl From<RenderError> for Failure {
    fn from(e: RenderError) -> Self {
        Failure {
            code: PipelineError::Render(e.clone()).code(),
            message: e.to_string(),
        }
    }
}

fn failure(code: &'static str, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn material_from(entry: &ProtocolEntry, albedo: [f64; 3]) -> Result<ProbeMaterial, Failure> {
    let exponent = param_f64(&entry.task_params, "phong_exponent").unwrap_or(ProbeMaterial::DEFAULT_PHONG_EXPONENT);
    let m = match param_str(&entry.task_params, "material").unwrap_or("diffuse") {
        "diffuse" => ProbeMaterial::diffuse(albedo),
        "matte" => ProbeMaterial::matte(albedo, exponent),
        "mirror" => ProbeMaterial::mirror(),
        other => return Err(failure("InvalidProtocol", format!("unknown material {other:?}"))),
    };
    if !m.is_valid() {
        return Err(failure("InvalidProtocol", "material parameters out of range"));
    }
    Ok(m)
}

/// Runs protocol entries on frames of one session. Owns the session's
/// renderer, so scene state is built once and reused across frames.
pub struct FrameProcessor {
    manifest: Arc<SessionManifest>,
    registry: ModelRegistry,
    asset_root: Option<PathBuf>,
    renderer: Renderer,
    state: InteractiveState,
    plane_cache: Option<(u64, RenderLayer)>,
    reference_maps: HashMap<String, Arc<EnvironmentMap>>,
    png_speed: PngSpeed,
}

impl FrameProcessor {
    pub fn new(manifest: Arc<SessionManifest>, registry: ModelRegistry, asset_root: Option<&Path>) -> Result<Self, PipelineError> {
        let renderer = Renderer::new(&manifest, asset_root)?;
        Ok(FrameProcessor {
            manifest,
            registry,
            asset_root: asset_root.map(Path::to_path_buf),
            renderer,
            state: InteractiveState::default(),
            plane_cache: None,
            reference_maps: HashMap::new(),
            png_speed: PngSpeed::Fast,
        })
    }

    pub fn manifest(&self) -> &Arc<SessionManifest> {
        &self.manifest
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn state(&self) -> &InteractiveState {
        &self.state
    }

    pub fn renderer(&self) -> &Renderer {
        &self.renderer
    }

    pub fn set_png_speed(&mut self, speed: PngSpeed) {
        self.png_speed = speed;
    }

    /// Applies a control command from the next processed frame on.
    pub fn apply_control(&mut self, cmd: &ControlCommand) -> Result<(), PipelineError> {
        self.state.apply(cmd, &self.manifest)?;
        if let ControlCommand::SetObjectPose {
            object_id, pose, scale, ..
        } = cmd
        {
            self.renderer.set_object_pose(object_id, *pose, Some(*scale))?;
        }
        Ok(())
    }

    /// Restores the manifest scene and clears interactive state.
    pub fn reset_state(&mut self) {
        self.state = InteractiveState::default();
        for o in &self.manifest.objects {
            self.renderer
                .set_object_pose(&o.object_id, o.pose, Some(o.scale))
                .expect("manifest objects exist in the renderer");
        }
    }

    fn reference_pfm(&mut self, path: &str) -> Result<Arc<EnvironmentMap>, Failure> {
        if let Some(m) = self.reference_maps.get(path) {
            return Ok(m.clone());
        }
        let p = PathBuf::from(path);
        let p = match &self.asset_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p,
        };
        let bytes = std::fs::read(&p).map_err(|e| failure("ReferenceUnavailable", format!("{}: {e}", p.display())))?;
        let map = Arc::new(decode_env_pfm(&bytes).map_err(|e| failure("ReferenceUnavailable", format!("{}: {e}", p.display())))?);
        self.reference_maps.insert(path.to_string(), map.clone());
        Ok(map)
    }

    /// Runs every selected entry of `protocol` on `frame`. Each model is
    /// invoked once per frame, all models concurrently; entry failures
    /// become ERROR envelopes and never abort the frame.
    pub fn process(&mut self, frame: &Arc<Frame>, protocol: &ExperimentProtocol) -> FrameOutput {
        let start = Instant::now();
        let entries: Vec<(usize, &ProtocolEntry)> = protocol
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| self.state.is_selected(&e.model_id))
            .collect();

        let mut needed: Vec<&str> = Vec::new();
        for (_, e) in &entries {
            let refs = param_str(&e.task_params, "reference_model");
            for id in std::iter::once(e.model_id.as_str()).chain(refs) {
                if !needed.contains(&id) {
                    needed.push(id);
                }
            }
        }
        let results: HashMap<String, Result<Prediction, GatewayError>> = {
            let registry = &self.registry;
            let manifest = &self.manifest;
            std::thread::scope(|s| {
                let handles: Vec<_> = needed
                    .iter()
                    .map(|&id| (id, s.spawn(move || registry.infer(id, frame, manifest).map(|o| o.prediction))))
                    .collect();
                handles
                    .into_iter()
                    .map(|(id, h)| {
                        let r = h.join().unwrap_or_else(|_| {
                            Err(GatewayError::ModelError {
                                model_id: id.to_string(),
                                message: "inference panicked".into(),
                            })
                        });
                        (id.to_string(), r)
                    })
                    .collect()
            })
        };

        let mut predictions: Vec<(String, Prediction)> = Vec::new();
        for (_, e) in &entries {
            if let Some(Ok(p)) = results.get(&e.model_id) {
                if !predictions.iter().any(|(id, _)| id == &e.model_id) {
                    predictions.push((e.model_id.clone(), p.clone()));
                }
            }
        }

        let mut outputs = Vec::with_capacity(entries.len());
        for (index, entry) in entries {
            let mut metrics = Vec::new();
            let result = match &results[&entry.model_id] {
                Ok(pred) => self.run_entry(frame, entry, pred, &results, &mut metrics),
                Err(e) => Err(Failure::from(e.clone())),
            };
            let envelope = result.unwrap_or_else(|f| {
                log::warn!(
                    "frame {} entry {} ({} / {}): {}",
                    frame.index,
                    index,
                    entry.model_id,
                    entry.task,
                    f.message
                );
                entry_error_envelope(f.code, &f.message, &self.manifest.session_id, frame.index, &entry.model_id, entry.task)
            });
            outputs.push(EntryOutput {
                entry_index: index,
                model_id: entry.model_id.clone(),
                task: entry.task,
                envelope,
                metrics,
            });
        }
        FrameOutput {
            session_id: self.manifest.session_id.clone(),
            frame_index: frame.index,
            predictions,
            entries: outputs,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }

    fn header(&self, frame: &Frame, entry: &ProtocolEntry) -> CompositeHeader {
        CompositeHeader {
            session_id: self.manifest.session_id.clone(),
            frame_index: frame.index,
            model_id: entry.model_id.clone(),
            task: entry.task,
        }
    }

    fn png_envelope(&self, frame: &Frame, entry: &ProtocolEntry, img: &RgbImage) -> Result<Envelope, Failure> {
        let png = encode_png_with(img, self.png_speed).map_err(|e| failure("EncodingFailure", e.to_string()))?;
        Ok(composite_envelope(&self.header(frame, entry), png))
    }

    fn run_entry(
        &mut self,
        frame: &Frame,
        entry: &ProtocolEntry,
        pred: &Prediction,
        results: &HashMap<String, Result<Prediction, GatewayError>>,
        metrics: &mut Vec<MetricRow>,
    ) -> Result<Envelope, Failure> {
        let row = |metric_id: String, value: f64| MetricRow {
            frame_index: frame.index,
            metric_id,
            value,
            model_id: entry.model_id.clone(),
            task: entry.task,
        };
        if let Prediction::Depth(d) = pred {
            if !entry.metric_ids.is_empty() {
                match depth_metrics_resampled(d, &frame.depth) {
                    Ok(report) => {
                        for m in &entry.metric_ids {
                            if let Some(v) = report.get(m) {
                                metrics.push(row(m.clone(), v));
                            }
                        }
                    }
                    Err(e) => log::warn!("frame {}: depth metrics for {} skipped: {e}", frame.index, entry.model_id),
                }
            }
        }

        match (entry.task, pred) {
            (TaskKind::ObjectRendering, Prediction::Depth(d)) => {
                let layer = self.renderer.render(&frame.pose);
                let img = composite(&frame.rgb, layer, d, &self.manifest)?;
                self.png_envelope(frame, entry, &img)
            }
            (TaskKind::ObjectRendering, Prediction::Lighting(map)) => {
                let k = self.manifest.intrinsics;
                let mut shaders = Vec::with_capacity(self.renderer.objects().len());
                for o in self.renderer.objects() {
                    shaders.push(EnvShader::new(map, material_from(entry, o.base_color)?));
                }
                self.renderer.rasterize(&frame.pose);
                let cam = frame.pose;
                let layer = self.renderer.shade_with(|i, slot, n, depth| {
                    let shader = &shaders[slot as usize];
                    let v = view_dir(&cam, &k, i, depth);
                    shader.shade(n.map(f64::from), v, shader.material().albedo)
                });
                let img = composite(&frame.rgb, layer, &frame.depth, &self.manifest)?;
                self.png_envelope(frame, entry, &img)
            }
            (TaskKind::OcclusionPlane, Prediction::Depth(d)) => {
                let depth_m = self
                    .state
                    .plane_depth_m
                    .or_else(|| param_f64(&entry.task_params, "depth_m"))
                    .unwrap_or(DEFAULT_PLANE_DEPTH_M);
                let (w, h) = self.manifest.target_resolution;
                let key = depth_m_to_mm(depth_m) as u64;
                if self.plane_cache.as_ref().is_none_or(|(k, _)| *k != key) {
                    self.plane_cache = Some((key, render_occlusion_plane(w, h, depth_m, PLANE_COLOR)?));
                }
                let layer = &self.plane_cache.as_ref().expect("cached").1;
                let img = composite(&frame.rgb, layer, d, &self.manifest)?;
                self.png_envelope(frame, entry, &img)
            }
            (TaskKind::PointCloud, Prediction::Depth(d)) => {
                let stride = entry
                    .task_params
                    .get("stride")
                    .and_then(|v| v.as_u64())
                    .map(|s| s as u32)
                    .unwrap_or(DEFAULT_STRIDE);
                let cloud = self
                    .point_cloud(frame, d, stride)
                    .map_err(|e| failure("PointCloudError", e.to_string()))?;
                Ok(Envelope::new(
                    MessageType::PointCloud,
                    json!({
                        "session_id": self.manifest.session_id,
                        "frame_index": frame.index,
                        "model_id": entry.model_id,
                        "task": entry.task,
                        "point_count": cloud.len(),
                    }),
                    vec![encode_pcd(&cloud)],
                ))
            }
            (TaskKind::EnvMapEval, Prediction::Lighting(map)) => {
                if !entry.metric_ids.is_empty() {
                    let reference = self.reference_for(entry, results)?;
                    match lighting_report(LightingTarget::EnvMap, &map.into(), &reference.as_ref().into()) {
                        Ok(r) => {
                            for m in &entry.metric_ids {
                                if let Some(v) = r.get(m) {
                                    metrics.push(row(m.clone(), v));
                                }
                            }
                        }
                        Err(e) => log::warn!("frame {}: lighting metrics for {} skipped: {e}", frame.index, entry.model_id),
                    }
                }
                let img = crate::imageio::tonemap_rgb(map.width(), map.height(), map.values());
                self.png_envelope(frame, entry, &img)
            }
            (TaskKind::ThreeSphere, Prediction::Lighting(map)) => {
                let r = entry
                    .task_params
                    .get("resolution")
                    .and_then(|v| v.as_u64())
                    .map(|r| r as u32)
                    .unwrap_or(DEFAULT_PROBE_RESOLUTION);
                let probes = probe_set(map, r);
                if !entry.metric_ids.is_empty() {
                    let reference = self.reference_for(entry, results)?;
                    let ref_probes = probe_set(&reference, r);
                    let mut reports = vec![lighting_report(LightingTarget::EnvMap, &map.into(), &reference.as_ref().into())];
                    for ((t, p), (_, g)) in probes.iter().zip(&ref_probes) {
                        reports.push(lighting_report(*t, &p.view(), &g.view()));
                    }
                    for report in reports {
                        match report {
                            Ok(rep) => {
                                for m in &entry.metric_ids {
                                    if let Some(v) = rep.get(m) {
                                        metrics.push(row(format!("{}.{m}", rep.target.as_str()), v));
                                    }
                                }
                            }
                            Err(e) => log::warn!("frame {}: lighting metrics for {} skipped: {e}", frame.index, entry.model_id),
                        }
                    }
                }
                self.png_envelope(frame, entry, &probe_strip(&probes, r))
            }
            (task, p) => Err(failure(
                "InvalidProtocol",
                format!("task {task} cannot use a {} prediction", p.kind().as_str()),
            )),
        }
    }

    fn reference_for(
        &mut self,
        entry: &ProtocolEntry,
        results: &HashMap<String, Result<Prediction, GatewayError>>,
    ) -> Result<Arc<EnvironmentMap>, Failure> {
        if let Some(id) = param_str(&entry.task_params, "reference_model") {
            return match results.get(id) {
                Some(Ok(Prediction::Lighting(m))) => Ok(Arc::new(m.clone())),
                Some(Ok(_)) => Err(failure("InvalidProtocol", format!("reference model {id:?} is not a lighting model"))),
                Some(Err(e)) => Err(failure("ReferenceUnavailable", format!("reference model {id:?} failed: {e}"))),
                None => Err(failure("ReferenceUnavailable", format!("reference model {id:?} was not run"))),
            };
        }
        match param_str(&entry.task_params, "reference_pfm") {
            Some(path) => self.reference_pfm(path),
            None => Err(failure("InvalidProtocol", "lighting metrics need a reference")),
        }
    }

    /// Real points from `depth` merged with the rendered virtual objects.
    pub fn point_cloud(&mut self, frame: &Frame, depth: &DepthMap, stride: u32) -> Result<ColoredPointSet, PointCloudError> {
        let k = self.manifest.intrinsics;
        let mut cloud = match unproject(depth, &frame.rgb, &k, &frame.pose, stride) {
            Ok(c) => c,
            Err(PointCloudError::NoValidPixels) => ColoredPointSet::default(),
            Err(e) => return Err(e),
        };
        let layer = self.renderer.render(&frame.pose);
        match virtual_to_points(layer, &k, &frame.pose, stride) {
            Ok(v) => cloud.extend(&v),
            Err(PointCloudError::NoValidPixels) => {}
            Err(e) => return Err(e),
        }
        Ok(cloud)
    }
}

fn probe_set(map: &EnvironmentMap, r: u32) -> Vec<(LightingTarget, ProbeRender)> {
    [
        (LightingTarget::Diffuse, ProbeMaterial::diffuse([1.0; 3])),
        (LightingTarget::Matte, ProbeMaterial::matte([1.0; 3], ProbeMaterial::DEFAULT_PHONG_EXPONENT)),
        (LightingTarget::Mirror, ProbeMaterial::mirror()),
    ]
    .into_iter()
    .map(|(t, m)| (t, render_probe(map, &m, r)))
    .collect()
}

/// Diffuse, matte and mirror probes side by side, 3R×R.
fn probe_strip(probes: &[(LightingTarget, ProbeRender)], r: u32) -> RgbImage {
    let w = r as usize * probes.len();
    let mut out = vec![0u8; w * r as usize * 3];
    for (slot, (_, p)) in probes.iter().enumerate() {
        let img = p.tonemapped();
        for y in 0..r as usize {
            let src = &img.values()[y * r as usize * 3..(y + 1) * r as usize * 3];
            let dst = (y * w + slot * r as usize) * 3;
            out[dst..dst + src.len()].copy_from_slice(src);
        }
    }
    RgbImage::new(w as u32, r, 3, out).expect("sized buffer")
}
