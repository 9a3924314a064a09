//! Shared domain types: cameras, poses, frames, depth and color buffers,
//! environment maps, session manifests and experiment protocols.
//!
//! Coordinates are right-handed with the camera looking down −Z, X to the
//! right and Y up. Poses are stored camera-to-world (or object-to-world);
//! the inverse direction is always derived.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Pinhole intrinsics in pixels. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Rescales the intrinsics to another image size of the same field of view.
    pub fn scaled_to(&self, width: u32, height: u32) -> CameraIntrinsics {
        if width == self.width && height == self.height {
            return *self;
        }
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    /// Projects a camera-space point (−Z forward, Y up) to continuous pixel
    /// coordinates. Returns `None` for points at or behind the camera plane.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let depth = -p[2];
        if depth <= 0.0 {
            return None;
        }
        Some([
            self.fx * (p[0] / depth) + self.cx,
            self.cy - self.fy * (p[1] / depth),
        ])
    }

    /// Camera-space point for pixel `(u, v)` at positive depth `d` meters.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [(u - self.cx) * d / self.fx, -(v - self.cy) * d / self.fy, -d]
    }
}

/// 4×4 row-major rigid transform. Translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose(pub [f64; 16]);

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose([
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    ]);

    pub fn from_translation(t: [f64; 3]) -> Pose {
        let mut m = Pose::IDENTITY.0;
        m[3] = t[0];
        m[7] = t[1];
        m[11] = t[2];
        Pose(m)
    }

    /// Builds a pose from a 3×3 rotation (rows) and a translation.
    pub fn from_parts(r: [[f64; 3]; 3], t: [f64; 3]) -> Pose {
        Pose([
            r[0][0], r[0][1], r[0][2], t[0], //
            r[1][0], r[1][1], r[1][2], t[1], //
            r[2][0], r[2][1], r[2][2], t[2], //
            0.0, 0.0, 0.0, 1.0,
        ])
    }

    /// Rotation about +Y by `angle` radians.
    pub fn rotation_y(angle: f64) -> Pose {
        let (s, c) = angle.sin_cos();
        Pose::from_parts([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], [0.0; 3])
    }

    /// Camera-to-world pose of a camera at `eye` looking at `target`.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Pose {
        // camera −Z points at the target, so +Z points back toward the eye
        let back = normalize(sub(eye, target));
        let right = normalize(cross(up, back));
        let cam_up = cross(back, right);
        Pose::from_parts(
            [
                [right[0], cam_up[0], back[0]],
                [right[1], cam_up[1], back[1]],
                [right[2], cam_up[2], back[2]],
            ],
            eye,
        )
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.0[row * 4 + col]
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.0[3], self.0[7], self.0[11]]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let a = &self.0;
        let b = &other.0;
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = (0..4).map(|k| a[r * 4 + k] * b[k * 4 + c]).sum();
            }
        }
        Pose(out)
    }

    /// Rigid inverse: `[Rᵀ | −Rᵀt]`.
    pub fn inverse(&self) -> Pose {
        let r = self.rotation();
        let t = self.translation();
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let nt = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        Pose::from_parts(rt, nt)
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    pub fn transform_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[4] * v[0] + m[5] * v[1] + m[6] * v[2],
            m[8] * v[0] + m[9] * v[1] + m[10] * v[2],
        ]
    }

    /// Checks the rigid-transform invariant: orthonormal rotation with
    /// determinant +1 (within `tol`) and an exact `(0,0,0,1)` last row.
    pub fn is_rigid(&self, tol: f64) -> bool {
        if self.0.iter().any(|v| !v.is_finite()) {
            return false;
        }
        if self.0[12..16] != [0.0, 0.0, 0.0, 1.0] {
            return false;
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > tol {
                    return false;
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        (det - 1.0).abs() <= tol
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    if n == 0.0 {
        a
    } else {
        [a[0] / n, a[1] / n, a[2] / n]
    }
}

/// Converts a raw millimeter sample to meters. Zero stays zero (invalid).
#[inline]
pub fn depth_mm_to_m(v: u16) -> f64 {
    v as f64 / 1000.0
}

/// Quantizes meters to the 16-bit millimeter representation, saturating at
/// 65535 and mapping non-positive or non-finite input to 0 (invalid).
#[inline]
pub fn depth_m_to_mm(m: f64) -> u16 {
    if !(m > 0.0) {
        return 0;
    }
    let mm = (m * 1000.0).round();
    if mm >= 65535.0 {
        65535
    } else {
        mm as u16
    }
}

/// Source index for nearest-neighbor resampling of `dst` samples onto `src`.
#[inline]
pub(crate) fn nearest_index(dst: usize, dst_len: usize, src_len: usize) -> usize {
    if dst_len == src_len {
        return dst;
    }
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize;
    s.min(src_len - 1)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BufferError {
    #[error("buffer holds {actual} samples, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid dimensions {width}x{height}")]
    BadDimensions { width: u32, height: u32 },
    #[error("unsupported channel count {0}")]
    BadChannels(u8),
    #[error("environment map values must be finite and non-negative")]
    BadRadiance,
}

/// Row-major depth in millimeters, 0 = invalid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<u16>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<u16>) -> Result<Self, BufferError> {
        if width == 0 || height == 0 {
            return Err(BufferError::BadDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(BufferError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, mm: u16) -> Self {
        DepthMap {
            width,
            height,
            values: vec![mm; width as usize * height as usize],
        }
    }

    /// Builds a map from meters, quantizing with [`depth_m_to_mm`].
    pub fn from_meters(width: u32, height: u32, meters: &[f64]) -> Result<Self, BufferError> {
        DepthMap::new(width, height, meters.iter().map(|&m| depth_m_to_mm(m)).collect())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn into_values(self) -> Vec<u16> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Depth in meters at `(x, y)`; 0.0 when invalid.
    #[inline]
    pub fn meters(&self, x: u32, y: u32) -> f64 {
        depth_mm_to_m(self.get(x, y))
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0).count()
    }

    pub fn resize_nearest(&self, width: u32, height: u32) -> DepthMap {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height as usize {
            let sy = nearest_index(y, height as usize, self.height as usize);
            let row = &self.values[sy * self.width as usize..(sy + 1) * self.width as usize];
            for x in 0..width as usize {
                values.push(row[nearest_index(x, width as usize, self.width as usize)]);
            }
        }
        DepthMap {
            width,
            height,
            values,
        }
    }

    /// Little-endian row-major raw16 encoding.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 2);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(width: u32, height: u32, bytes: &[u8]) -> Result<Self, BufferError> {
        let expected = width as usize * height as usize * 2;
        if bytes.len() != expected {
            return Err(BufferError::LengthMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        let values = bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        DepthMap::new(width, height, values)
    }
}

/// Row-major 8-bit RGB or RGBA image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    channels: u8,
    values: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, channels: u8, values: Vec<u8>) -> Result<Self, BufferError> {
        if width == 0 || height == 0 {
            return Err(BufferError::BadDimensions { width, height });
        }
        if channels != 3 && channels != 4 {
            return Err(BufferError::BadChannels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if values.len() != expected {
            return Err(BufferError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(RgbImage {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            values.extend_from_slice(&rgb);
        }
        RgbImage {
            width,
            height,
            channels: 3,
            values,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [u8] {
        &mut self.values
    }

    #[inline]
    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * self.channels as usize;
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }
}

/// One timestamped capture unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub timestamp_ns: u64,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub pose: Pose,
}

/// Per-frame metadata carried in FRAME headers and `meta.json` files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub index: u64,
    pub timestamp_ns: u64,
    pub pose: Pose,
}

impl Frame {
    pub fn meta(&self) -> FrameMeta {
        FrameMeta {
            index: self.index,
            timestamp_ns: self.timestamp_ns,
            pose: self.pose,
        }
    }
}

/// Equirectangular linear RGB radiance, `width = 2 × height`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl EnvironmentMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, BufferError> {
        if height == 0 || width != 2 * height {
            return Err(BufferError::BadDimensions { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if values.len() != expected {
            return Err(BufferError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(BufferError::BadRadiance);
        }
        Ok(EnvironmentMap {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: u32, height: u32, rgb: [f32; 3]) -> Result<Self, BufferError> {
        let n = width as usize * height as usize;
        let mut values = Vec::with_capacity(n * 3);
        for _ in 0..n {
            values.extend_from_slice(&rgb);
        }
        EnvironmentMap::new(width, height, values)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn texel(&self, col: u32, row: u32) -> [f32; 3] {
        let i = (row as usize * self.width as usize + col as usize) * 3;
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }

    /// Multiplies every radiance value by `k ≥ 0`.
    pub fn scaled(&self, k: f32) -> EnvironmentMap {
        EnvironmentMap {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    /// Rotates the map about the vertical axis by `delta_deg`, rounded to
    /// whole texel columns. Content at azimuth φ moves to φ + Δ.
    pub fn rotate_azimuth(&self, delta_deg: f64) -> EnvironmentMap {
        let w = self.width as i64;
        let shift = ((delta_deg / 360.0) * w as f64).round() as i64;
        let shift = shift.rem_euclid(w) as usize;
        if shift == 0 {
            return self.clone();
        }
        let w = w as usize;
        let mut values = vec![0.0; self.values.len()];
        for row in 0..self.height as usize {
            for col in 0..w {
                let dst = (row * w + (col + shift) % w) * 3;
                let src = (row * w + col) * 3;
                values[dst..dst + 3].copy_from_slice(&self.values[src..src + 3]);
            }
        }
        EnvironmentMap {
            width: self.width,
            height: self.height,
            values,
        }
    }
}

/// An object placed in the scene: an OBJ mesh or the `plane` primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualObject {
    pub object_id: String,
    pub mesh_ref: String,
    pub pose: Pose,
    pub scale: f64,
    pub base_color: [f64; 3],
}

/// Immutable per-session capture configuration sent once in the INIT packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub intrinsics: CameraIntrinsics,
    pub target_resolution: (u32, u32),
    pub depth_resolution: (u32, u32),
    pub objects: Vec<VirtualObject>,
    pub created_at: DateTime<Utc>,
}

/// First violated manifest invariant, with its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

impl std::error::Error for Violation {}

pub type ValidationResult = Result<(), Violation>;

/// Identifiers used as directory names: `[A-Za-z0-9._-]+`, not `.`/`..`.
pub fn is_valid_identifier(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

pub fn validate_manifest(m: &SessionManifest) -> ValidationResult {
    if m.session_id.is_empty() {
        return Err(Violation::new("session_id", "must be nonempty"));
    }
    if !is_valid_identifier(&m.session_id) {
        return Err(Violation::new("session_id", "must match [A-Za-z0-9._-]+"));
    }
    let k = &m.intrinsics;
    if !(k.fx > 0.0) || !k.fx.is_finite() {
        return Err(Violation::new("intrinsics.fx", "must be > 0"));
    }
    if !(k.fy > 0.0) || !k.fy.is_finite() {
        return Err(Violation::new("intrinsics.fy", "must be > 0"));
    }
    if k.width < 1 {
        return Err(Violation::new("intrinsics.width", "must be >= 1"));
    }
    if k.height < 1 {
        return Err(Violation::new("intrinsics.height", "must be >= 1"));
    }
    if !(k.cx >= 0.0 && k.cx < k.width as f64) {
        return Err(Violation::new("intrinsics.cx", "must be in [0, width)"));
    }
    if !(k.cy >= 0.0 && k.cy < k.height as f64) {
        return Err(Violation::new("intrinsics.cy", "must be in [0, height)"));
    }
    let (tw, th) = m.target_resolution;
    if tw < 1 || th < 1 {
        return Err(Violation::new("target_resolution", "must be >= 1 in both dimensions"));
    }
    if (k.width, k.height) != (tw, th) {
        return Err(Violation::new(
            "intrinsics.width",
            "must match target_resolution",
        ));
    }
    let (dw, dh) = m.depth_resolution;
    if dw < 1 || dh < 1 {
        return Err(Violation::new("depth_resolution", "must be >= 1 in both dimensions"));
    }
    for (i, obj) in m.objects.iter().enumerate() {
        let path = |f: &str| format!("objects[{i}].{f}");
        if !is_valid_identifier(&obj.object_id) {
            return Err(Violation::new(path("object_id"), "must match [A-Za-z0-9._-]+"));
        }
        if m.objects[..i].iter().any(|o| o.object_id == obj.object_id) {
            return Err(Violation::new(path("object_id"), "must be unique"));
        }
        if obj.mesh_ref.is_empty() {
            return Err(Violation::new(path("mesh_ref"), "must be nonempty"));
        }
        if !obj.pose.is_rigid(1e-6) {
            return Err(Violation::new(path("pose"), "must be a rigid transform"));
        }
        if !(obj.scale > 0.0) || !obj.scale.is_finite() {
            return Err(Violation::new(path("scale"), "must be > 0"));
        }
        if obj.base_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Violation::new(path("base_color"), "must lie in [0, 1]"));
        }
    }
    Ok(())
}

/// AR task kinds an experiment protocol entry can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ObjectRendering,
    OcclusionPlane,
    PointCloud,
    EnvMapEval,
    ThreeSphere,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::ObjectRendering => "object_rendering",
            TaskKind::OcclusionPlane => "occlusion_plane",
            TaskKind::PointCloud => "point_cloud",
            TaskKind::EnvMapEval => "env_map_eval",
            TaskKind::ThreeSphere => "three_sphere",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolEntry {
    pub model_id: String,
    pub task: TaskKind,
    #[serde(default)]
    pub task_params: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub metric_ids: Vec<String>,
}

/// A declarative set of model–task–metric combinations run over a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentProtocol {
    pub protocol_id: String,
    pub entries: Vec<ProtocolEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_manifest() -> SessionManifest {
        SessionManifest {
            session_id: "s1".into(),
            intrinsics: CameraIntrinsics {
                fx: 640.0,
                fy: 640.0,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480,
            },
            target_resolution: (640, 480),
            depth_resolution: (256, 192),
            objects: vec![VirtualObject {
                object_id: "teapot".into(),
                mesh_ref: "plane".into(),
                pose: Pose::from_translation([0.0, 0.0, -1.0]),
                scale: 0.2,
                base_color: [0.8, 0.2, 0.2],
            }],
            created_at: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
        }
    }

    #[test]
    fn valid_manifest_passes() {
        assert_eq!(validate_manifest(&sample_manifest()), Ok(()));
    }

    #[test]
    fn zero_focal_length_reports_field() {
        let mut m = sample_manifest();
        m.intrinsics.fx = 0.0;
        let v = validate_manifest(&m).unwrap_err();
        assert_eq!(v.to_string(), "intrinsics.fx must be > 0");
    }

    #[test]
    fn negative_scale_reports_object_path() {
        let mut m = sample_manifest();
        m.objects[0].scale = -1.0;
        let v = validate_manifest(&m).unwrap_err();
        assert_eq!(v.to_string(), "objects[0].scale must be > 0");
    }

    #[test]
    fn nan_fields_are_violations_not_panics() {
        let mut m = sample_manifest();
        m.intrinsics.cx = f64::NAN;
        assert_eq!(validate_manifest(&m).unwrap_err().field, "intrinsics.cx");
        let mut m = sample_manifest();
        m.objects[0].pose.0[0] = f64::NAN;
        assert_eq!(validate_manifest(&m).unwrap_err().field, "objects[0].pose");
    }

    #[test]
    fn manifest_json_uses_flat_pose_arrays() {
        let m = sample_manifest();
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["objects"][0]["pose"].as_array().unwrap().len(), 16);
        assert_eq!(json["target_resolution"], serde_json::json!([640, 480]));
        let back: SessionManifest = serde_json::from_value(json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn pose_inverse_composes_to_identity() {
        let p = Pose::look_at([1.0, 0.5, 2.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert!(p.is_rigid(1e-9));
        let id = p.compose(&p.inverse());
        for (a, b) in id.0.iter().zip(Pose::IDENTITY.0.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn look_at_points_negative_z_at_target() {
        let p = Pose::look_at([0.0, 0.0, 3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let target_cam = p.inverse().transform_point([0.0, 0.0, 0.0]);
        assert!((target_cam[2] + 3.0).abs() < 1e-12);
        assert!(target_cam[0].abs() < 1e-12 && target_cam[1].abs() < 1e-12);
    }

    #[test]
    fn meter_conversion_is_exact() {
        for v in [0u16, 1, 999, 1000, 1500, 65535] {
            assert_eq!(depth_mm_to_m(v), v as f64 / 1000.0);
        }
        assert_eq!(depth_m_to_mm(1.0), 1000);
        assert_eq!(depth_m_to_mm(100.0), 65535);
        assert_eq!(depth_m_to_mm(-1.0), 0);
        assert_eq!(depth_m_to_mm(f64::NAN), 0);
    }

    #[test]
    fn depth_resize_nearest_keeps_blocks() {
        let d = DepthMap::new(2, 1, vec![100, 200]).unwrap();
        let r = d.resize_nearest(4, 2);
        assert_eq!(r.values(), &[100, 100, 200, 200, 100, 100, 200, 200]);
    }

    #[test]
    fn env_rotation_by_zero_is_identity_and_full_turn_wraps() {
        let mut vals = vec![0.0f32; 8 * 4 * 3];
        vals[3 * 5] = 1.0;
        let m = EnvironmentMap::new(8, 4, vals).unwrap();
        assert_eq!(m.rotate_azimuth(0.0), m);
        assert_eq!(m.rotate_azimuth(360.0), m);
        let r = m.rotate_azimuth(90.0);
        assert_eq!(r.texel(7, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn env_map_rejects_bad_aspect_and_negative_values() {
        assert!(EnvironmentMap::constant(4, 4, [1.0; 3]).is_err());
        assert!(EnvironmentMap::constant(8, 4, [-1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn intrinsics_project_unproject_round_trip() {
        let k = sample_manifest().intrinsics;
        let p = k.unproject(100.0, 50.0, 2.5);
        let uv = k.project(p).unwrap();
        assert!((uv[0] - 100.0).abs() < 1e-9 && (uv[1] - 50.0).abs() < 1e-9);
        assert!(k.project([0.0, 0.0, 1.0]).is_none());
    }
}

#[cfg(test)]
pub(crate) use tests::sample_manifest;
