//! Off-screen software rendering of virtual objects and depth-tested
//! compositing over camera frames.

mod mesh;
mod raster;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use mesh::{load_obj, parse_obj, Face, TriangleMesh};
pub use raster::{rasterize_mesh, GBuffer, NEAR_PLANE_M, NO_OBJECT};

use crate::model::{depth_mm_to_m, nearest_index, normalize, CameraIntrinsics, DepthMap, Pose, RgbImage, SessionManifest};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("obj line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("mesh {mesh_ref:?} unavailable: {reason}")]
    MeshUnavailable { mesh_ref: String, reason: String },
    #[error("resolution mismatch: expected {expected:?}, got {actual:?}")]
    ResolutionMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error("plane depth must be > 0, got {0}")]
    NonpositiveDepth(f64),
    #[error("no object {0:?} in the scene")]
    UnknownObject(String),
}

/// Default key light, world space, from above and slightly in front.
pub const DEFAULT_LIGHT_DIR: [f64; 3] = [0.267_261_241_912_424_4, 0.801_783_725_737_273_2, 0.534_522_483_824_848_8];

pub const AMBIENT_FLOOR: f64 = 0.1;

/// Rendered virtual content: RGBA color and a depth buffer in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderLayer {
    pub color: RgbImage,
    /// `+inf` where nothing was drawn.
    pub zbuffer: Vec<f32>,
}

impl RenderLayer {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        RenderLayer {
            color: RgbImage::new(width, height, 4, vec![0; n * 4]).expect("sized buffer"),
            zbuffer: vec![f32::INFINITY; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.color.width()
    }

    pub fn height(&self) -> u32 {
        self.color.height()
    }

    #[inline]
    pub fn alpha(&self, i: usize) -> u8 {
        self.color.values()[i * 4 + 3]
    }

    pub fn covered_count(&self) -> usize {
        self.color.values().chunks_exact(4).filter(|p| p[3] > 0).count()
    }

    /// Writes shaded colors for every covered G-buffer pixel.
    pub(crate) fn fill_from(&mut self, gb: &GBuffer, mut shade: impl FnMut(usize) -> [u8; 3]) {
        let px = self.color.values_mut();
        for i in 0..self.zbuffer.len() {
            if gb.covered(i) {
                let c = shade(i);
                px[i * 4..i * 4 + 4].copy_from_slice(&[c[0], c[1], c[2], 255]);
                self.zbuffer[i] = gb.depth[i];
            } else {
                px[i * 4..i * 4 + 4].fill(0);
                self.zbuffer[i] = f32::INFINITY;
            }
        }
    }
}

/// One mesh placed in the world.
#[derive(Debug, Clone, Copy)]
pub struct MeshInstance<'a> {
    pub mesh: &'a TriangleMesh,
    pub pose: Pose,
    pub scale: f64,
    pub base_color: [f64; 3],
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn lambert(base: [f64; 3], n: [f32; 3], light: [f64; 3]) -> [u8; 3] {
    let ndl = n[0] as f64 * light[0] + n[1] as f64 * light[1] + n[2] as f64 * light[2];
    let s = ndl.max(AMBIENT_FLOOR);
    [to_u8(base[0] * s), to_u8(base[1] * s), to_u8(base[2] * s)]
}

/// Rasterizes and Lambert-shades `instances` seen from camera-to-world `cam`.
pub fn render_objects(instances: &[MeshInstance], cam: &Pose, k: &CameraIntrinsics, light_dir: [f64; 3]) -> RenderLayer {
    let mut gb = GBuffer::new(k.width, k.height);
    for (slot, inst) in instances.iter().enumerate() {
        rasterize_mesh(&mut gb, inst.mesh, &inst.pose, inst.scale, cam, k, slot as u32);
    }
    let light = normalize(light_dir);
    let mut layer = RenderLayer::empty(k.width, k.height);
    layer.fill_from(&gb, |i| lambert(instances[gb.object[i] as usize].base_color, gb.normal[i], light));
    layer
}

/// Full-viewport fronto-parallel plane at camera depth `plane_depth_m`.
pub fn render_occlusion_plane(width: u32, height: u32, plane_depth_m: f64, color: [u8; 3]) -> Result<RenderLayer, RenderError> {
    if !(plane_depth_m > 0.0) || !plane_depth_m.is_finite() {
        return Err(RenderError::NonpositiveDepth(plane_depth_m));
    }
    let n = width as usize * height as usize;
    let mut px = Vec::with_capacity(n * 4);
    for _ in 0..n {
        px.extend_from_slice(&[color[0], color[1], color[2], 255]);
    }
    Ok(RenderLayer {
        color: RgbImage::new(width, height, 4, px).expect("sized buffer"),
        zbuffer: vec![plane_depth_m as f32; n],
    })
}

/// Depth-tests `layer` against predicted scene depth and blends it over the
/// camera frame. Depth is resized to the target grid by nearest neighbor;
/// invalid depth never occludes.
pub fn composite(camera_rgb: &RgbImage, layer: &RenderLayer, depth_pred: &DepthMap, manifest: &SessionManifest) -> Result<RgbImage, RenderError> {
    let (w, h) = manifest.target_resolution;
    let actual = (camera_rgb.width(), camera_rgb.height());
    if actual != (w, h) {
        return Err(RenderError::ResolutionMismatch { expected: (w, h), actual });
    }
    let lactual = (layer.width(), layer.height());
    if lactual != (w, h) {
        return Err(RenderError::ResolutionMismatch {
            expected: (w, h),
            actual: lactual,
        });
    }
    let (dw, dh) = (depth_pred.width() as usize, depth_pred.height() as usize);
    let xs: Vec<usize> = (0..w as usize).map(|x| nearest_index(x, w as usize, dw)).collect();
    let ys: Vec<usize> = (0..h as usize).map(|y| nearest_index(y, h as usize, dh)).collect();
    let ch = camera_rgb.channels() as usize;
    let src = camera_rgb.values();
    let lc = layer.color.values();
    let depth = depth_pred.values();
    let mut out = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h as usize {
        let row = ys[y] * dw;
        for x in 0..w as usize {
            let i = y * w as usize + x;
            let mm = depth[row + xs[x]];
            let scene = if mm == 0 { f64::INFINITY } else { depth_mm_to_m(mm) };
            if lc[i * 4 + 3] > 0 && (layer.zbuffer[i] as f64) < scene {
                out.extend_from_slice(&lc[i * 4..i * 4 + 3]);
            } else {
                out.extend_from_slice(&src[i * ch..i * ch + 3]);
            }
        }
    }
    Ok(RgbImage::new(w, h, 3, out).expect("sized buffer"))
}

/// A scene object with a shared mesh.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub object_id: String,
    pub mesh: Arc<TriangleMesh>,
    pub pose: Pose,
    pub scale: f64,
    pub base_color: [f64; 3],
}

/// Resolves a mesh reference: the builtin primitives `plane`, `cube` and
/// `sphere`, otherwise an OBJ path (relative paths against `asset_root`).
pub fn resolve_mesh(mesh_ref: &str, asset_root: Option<&Path>) -> Result<TriangleMesh, RenderError> {
    match mesh_ref {
        "plane" => Ok(TriangleMesh::plane()),
        "cube" => Ok(TriangleMesh::cube()),
        "sphere" => Ok(TriangleMesh::uv_sphere(32, 16)),
        path => {
            let p = PathBuf::from(path);
            let p = match asset_root {
                Some(root) if p.is_relative() => root.join(p),
                _ => p,
            };
            load_obj(p)
        }
    }
}

/// Session renderer. The scene is built once from the manifest; pose edits
/// touch only the affected object and the frame buffers are reused.
pub struct Renderer {
    intrinsics: CameraIntrinsics,
    objects: Vec<SceneObject>,
    light_dir: [f64; 3],
    gbuffer: GBuffer,
    layer: RenderLayer,
    scene_allocations: usize,
}

impl Renderer {
    pub fn new(manifest: &SessionManifest, asset_root: Option<&Path>) -> Result<Self, RenderError> {
        let mut cache: HashMap<&str, Arc<TriangleMesh>> = HashMap::new();
        let mut objects = Vec::with_capacity(manifest.objects.len());
        for o in &manifest.objects {
            let mesh = match cache.get(o.mesh_ref.as_str()) {
                Some(m) => m.clone(),
                None => {
                    let m = Arc::new(resolve_mesh(&o.mesh_ref, asset_root)?);
                    cache.insert(&o.mesh_ref, m.clone());
                    m
                }
            };
            objects.push(SceneObject {
                object_id: o.object_id.clone(),
                mesh,
                pose: o.pose,
                scale: o.scale,
                base_color: o.base_color,
            });
        }
        let k = manifest.intrinsics;
        Ok(Renderer {
            intrinsics: k,
            objects,
            light_dir: DEFAULT_LIGHT_DIR,
            gbuffer: GBuffer::new(k.width, k.height),
            layer: RenderLayer::empty(k.width, k.height),
            scene_allocations: 1,
        })
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn set_light_dir(&mut self, dir: [f64; 3]) {
        self.light_dir = normalize(dir);
    }

    pub fn set_object_pose(&mut self, object_id: &str, pose: Pose, scale: Option<f64>) -> Result<(), RenderError> {
        let obj = self
            .objects
            .iter_mut()
            .find(|o| o.object_id == object_id)
            .ok_or_else(|| RenderError::UnknownObject(object_id.to_string()))?;
        obj.pose = pose;
        if let Some(s) = scale {
            obj.scale = s;
        }
        Ok(())
    }

    /// Number of scene or frame-buffer allocations so far; stays at 1 while
    /// only poses change.
    pub fn scene_allocations(&self) -> usize {
        self.scene_allocations
    }

    /// Rasterizes every object into the internal G-buffer.
    pub fn rasterize(&mut self, cam: &Pose) -> &GBuffer {
        self.gbuffer.clear();
        for (slot, o) in self.objects.iter().enumerate() {
            rasterize_mesh(&mut self.gbuffer, &o.mesh, &o.pose, o.scale, cam, &self.intrinsics, slot as u32);
        }
        &self.gbuffer
    }

    /// Lambert-shaded layer from camera pose `cam`.
    pub fn render(&mut self, cam: &Pose) -> &RenderLayer {
        self.rasterize(cam);
        let gb = &self.gbuffer;
        let objects = &self.objects;
        let light = self.light_dir;
        self.layer
            .fill_from(gb, |i| lambert(objects[gb.object[i] as usize].base_color, gb.normal[i], light));
        &self.layer
    }

    /// Shades the last rasterization with a caller-supplied function of
    /// (pixel index, object slot, world normal, camera depth).
    pub fn shade_with(&mut self, mut shade: impl FnMut(usize, u32, [f32; 3], f32) -> [u8; 3]) -> &RenderLayer {
        let gb = &self.gbuffer;
        self.layer.fill_from(gb, |i| shade(i, gb.object[i], gb.normal[i], gb.depth[i]));
        &self.layer
    }

    pub fn layer(&self) -> &RenderLayer {
        &self.layer
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_manifest;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    #[test]
    fn principal_point_projection() {
        // small triangle around the optical axis at 2 m
        let m = TriangleMesh::from_triangles(vec![[-0.01, -0.01, 0.0], [0.01, -0.01, 0.0], [0.0, 0.01, 0.0]], &[[0, 1, 2]]).unwrap();
        let inst = MeshInstance {
            mesh: &m,
            pose: Pose::from_translation([0.0, 0.0, -2.0]),
            scale: 1.0,
            base_color: [1.0; 3],
        };
        let layer = render_objects(&[inst], &Pose::IDENTITY, &k(), DEFAULT_LIGHT_DIR);
        let i = 240 * 640 + 320;
        assert_eq!(layer.alpha(i), 255);
        assert!((layer.zbuffer[i] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn behind_camera_is_empty() {
        let m = TriangleMesh::plane();
        let inst = MeshInstance {
            mesh: &m,
            pose: Pose::from_translation([0.0, 0.0, 1.0]),
            scale: 1.0,
            base_color: [1.0; 3],
        };
        let layer = render_objects(&[inst], &Pose::IDENTITY, &k(), DEFAULT_LIGHT_DIR);
        assert_eq!(layer.covered_count(), 0);
    }

    #[test]
    fn back_face_is_culled() {
        let m = TriangleMesh::plane();
        let inst = MeshInstance {
            mesh: &m,
            pose: Pose::from_parts([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]], [0.0, 0.0, -1.0]),
            scale: 0.2,
            base_color: [1.0; 3],
        };
        assert_eq!(render_objects(&[inst], &Pose::IDENTITY, &k(), DEFAULT_LIGHT_DIR).covered_count(), 0);
    }

    #[test]
    fn shared_edge_covers_each_pixel_once() {
        // the plane's diagonal passes exactly through pixel centers
        let m = TriangleMesh::plane();
        let mut gb = GBuffer::new(640, 480);
        let k = CameraIntrinsics { fx: 100.0, fy: 100.0, ..k() };
        let pose = Pose::from_translation([0.0, 0.0, -1.0]);
        rasterize_mesh(&mut gb, &m, &pose, 1.0, &Pose::IDENTITY, &k, 0);
        let covered = gb.object.iter().filter(|&&o| o != NO_OBJECT).count();
        // square spans [270, 370] × [190, 290]: top-left rule keeps 100 × 100
        assert_eq!(covered, 100 * 100);
    }

    #[test]
    fn lambert_has_ambient_floor() {
        assert_eq!(lambert([1.0; 3], [0.0, -1.0, 0.0], [0.0, 1.0, 0.0]), [26, 26, 26]);
        assert_eq!(lambert([1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]), [255, 128, 0]);
    }

    #[test]
    fn plane_rejects_nonpositive_depth() {
        assert!(matches!(render_occlusion_plane(2, 2, 0.0, [0; 3]), Err(RenderError::NonpositiveDepth(_))));
    }

    #[test]
    fn composite_rules() {
        let m = sample_manifest();
        let (w, h) = m.target_resolution;
        let cam = RgbImage::filled(w, h, [10, 20, 30]);
        let plane = render_occlusion_plane(w, h, 1.0, [0, 0, 0]).unwrap();
        let far = DepthMap::filled(4, 3, 2000);
        let near = DepthMap::filled(4, 3, 500);
        let holes = DepthMap::filled(4, 3, 0);
        assert!(composite(&cam, &plane, &far, &m).unwrap().values().iter().all(|&v| v == 0));
        assert_eq!(composite(&cam, &plane, &near, &m).unwrap(), cam);
        assert!(composite(&cam, &plane, &holes, &m).unwrap().values().iter().all(|&v| v == 0));
        let small = RgbImage::filled(2, 2, [0; 3]);
        assert!(matches!(composite(&small, &plane, &far, &m), Err(RenderError::ResolutionMismatch { .. })));
    }

    #[test]
    fn renderer_reuses_scene() {
        let m = sample_manifest();
        let mut r = Renderer::new(&m, None).unwrap();
        let a = r.render(&Pose::IDENTITY).clone();
        assert!(a.covered_count() > 0);
        let b = r.render(&Pose::IDENTITY).clone();
        assert_eq!(a, b);
        r.set_object_pose("teapot", Pose::from_translation([0.1, 0.0, -1.0]), None).unwrap();
        let c = r.render(&Pose::IDENTITY).clone();
        assert_ne!(a, c);
        assert_eq!(r.scene_allocations(), 1);
        assert!(matches!(
            r.set_object_pose("missing", Pose::IDENTITY, None),
            Err(RenderError::UnknownObject(_))
        ));
    }
}
