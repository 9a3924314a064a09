//! Synthetic capture sessions with exact analytic depth.

use std::fmt;
use std::str::FromStr;

use chrono::DateTime;

use crate::model::{normalize, CameraIntrinsics, DepthMap, Frame, Pose, RgbImage, SessionManifest, VirtualObject};
use crate::store::{SessionStore, StoreError};

pub const FRAME_INTERVAL_NS: u64 = 33_333_333;
const FIRST_TIMESTAMP_NS: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Depth grows linearly from 0.5 m (top row) to 1.5 m (bottom row).
    Ramp,
    /// 0.5 m above the middle row, 1.5 m from it down.
    Step,
    /// Camera circling a box standing on a floor.
    OrbitingBox,
}

impl SceneKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SceneKind::Ramp => "ramp",
            SceneKind::Step => "step",
            SceneKind::OrbitingBox => "orbiting-box",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ramp" => Ok(SceneKind::Ramp),
            "step" => Ok(SceneKind::Step),
            "orbiting-box" => Ok(SceneKind::OrbitingBox),
            other => Err(format!("unknown scene {other:?} (ramp, step, orbiting-box)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub scene: SceneKind,
    pub frames: u32,
    pub width: u32,
    pub height: u32,
    /// Orbit advance per frame; only used by [`SceneKind::OrbitingBox`].
    pub orbit_step_deg: f64,
}

impl SyntheticSpec {
    pub fn new(scene: SceneKind, frames: u32, width: u32, height: u32) -> Self {
        SyntheticSpec {
            scene,
            frames,
            width,
            height,
            orbit_step_deg: 3.0,
        }
    }

    pub fn session_id(&self) -> String {
        format!("{}-{}x{}-{}", self.scene, self.width, self.height, self.frames)
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.width as f64,
            fy: self.width as f64,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    pub fn manifest(&self) -> SessionManifest {
        SessionManifest {
            session_id: self.session_id(),
            intrinsics: self.intrinsics(),
            target_resolution: (self.width, self.height),
            depth_resolution: (self.width, self.height),
            objects: vec![VirtualObject {
                object_id: "cube".into(),
                mesh_ref: "cube".into(),
                pose: Pose::from_parts(
                    [
                        [0.866_025_403_784_438_6, 0.0, 0.5],
                        [0.0, 1.0, 0.0],
                        [-0.5, 0.0, 0.866_025_403_784_438_6],
                    ],
                    [0.0, 0.0, -0.8],
                ),
                scale: 0.2,
                base_color: [0.85, 0.3, 0.2],
            }],
            created_at: DateTime::from_timestamp(1_704_067_200, 0).expect("valid timestamp"),
        }
    }

    /// Frame `i` of the scene.
    pub fn frame(&self, i: u32) -> Frame {
        let (depth, rgb, pose) = match self.scene {
            SceneKind::Ramp => ramp(self.width, self.height),
            SceneKind::Step => step(self.width, self.height),
            SceneKind::OrbitingBox => orbiting_box(&self.intrinsics(), (i as f64 * self.orbit_step_deg).to_radians()),
        };
        Frame {
            index: i as u64,
            timestamp_ns: FIRST_TIMESTAMP_NS + i as u64 * FRAME_INTERVAL_NS,
            rgb,
            depth,
            pose,
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame> + '_ {
        (0..self.frames).map(|i| self.frame(i))
    }
}

/// Depth in millimeters of ramp row `v`.
pub fn ramp_depth_mm(v: u32, height: u32) -> u16 {
    if height < 2 {
        return 500;
    }
    500 + (1000.0 * v as f64 / (height - 1) as f64).round() as u16
}

fn ramp(w: u32, h: u32) -> (DepthMap, RgbImage, Pose) {
    let mut depth = Vec::with_capacity((w * h) as usize);
    let mut rgb = Vec::with_capacity((w * h * 3) as usize);
    for v in 0..h {
        let mm = ramp_depth_mm(v, h);
        let g = ((mm - 500) as f64 / 1000.0 * 255.0).round() as u8;
        for _ in 0..w {
            depth.push(mm);
            rgb.extend_from_slice(&[g, g, g]);
        }
    }
    (
        DepthMap::new(w, h, depth).expect("sized"),
        RgbImage::new(w, h, 3, rgb).expect("sized"),
        Pose::IDENTITY,
    )
}

fn step(w: u32, h: u32) -> (DepthMap, RgbImage, Pose) {
    let mut depth = Vec::with_capacity((w * h) as usize);
    let mut rgb = Vec::with_capacity((w * h * 3) as usize);
    for v in 0..h {
        let near = v < h / 2;
        let (mm, c) = if near { (500, [200, 180, 60]) } else { (1500, [40, 70, 160]) };
        for _ in 0..w {
            depth.push(mm);
            rgb.extend_from_slice(&c);
        }
    }
    (
        DepthMap::new(w, h, depth).expect("sized"),
        RgbImage::new(w, h, 3, rgb).expect("sized"),
        Pose::IDENTITY,
    )
}

pub const ORBIT_RADIUS_M: f64 = 2.0;
pub const ORBIT_HEIGHT_M: f64 = 0.8;
pub const BOX_HALF_EXTENT_M: f64 = 0.3;
/// Surfaces farther than this read as invalid depth, like a real sensor.
pub const SENSOR_MAX_RANGE_M: f64 = 8.0;

/// Camera-to-world pose at orbit angle `angle` (radians).
pub fn orbit_pose(angle: f64) -> Pose {
    let eye = [ORBIT_RADIUS_M * angle.sin(), ORBIT_HEIGHT_M, ORBIT_RADIUS_M * angle.cos()];
    Pose::look_at(eye, [0.0, BOX_HALF_EXTENT_M, 0.0], [0.0, 1.0, 0.0])
}

/// Ray parameter and surface color of the nearest hit along `dir` from
/// `eye`; the box spans `[-e, e] × [0, 2e] × [-e, e]` on the floor `y = 0`.
fn trace(eye: [f64; 3], dir: [f64; 3]) -> Option<(f64, [u8; 3])> {
    let e = BOX_HALF_EXTENT_M;
    let lo = [-e, 0.0, -e];
    let hi = [e, 2.0 * e, e];
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        if dir[a].abs() < 1e-12 {
            if eye[a] < lo[a] || eye[a] > hi[a] {
                t_near = f64::INFINITY;
                break;
            }
            continue;
        }
        let t0 = (lo[a] - eye[a]) / dir[a];
        let t1 = (hi[a] - eye[a]) / dir[a];
        let (t0, t1) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        if t0 > t_near {
            t_near = t0;
            axis = a;
        }
        t_far = t_far.min(t1);
    }
    let box_hit = (t_near <= t_far && t_near > 0.0).then(|| {
        let color = match (axis, dir[axis] < 0.0) {
            (0, _) => [200, 60, 50],
            (1, _) => [230, 210, 80],
            _ => [60, 90, 200],
        };
        (t_near, color)
    });
    let floor_hit = (dir[1] < 0.0).then(|| {
        let t = -eye[1] / dir[1];
        let x = eye[0] + t * dir[0];
        let z = eye[2] + t * dir[2];
        let checker = ((x * 4.0).floor() as i64 + (z * 4.0).floor() as i64).rem_euclid(2) == 0;
        (t, if checker { [170, 170, 170] } else { [90, 90, 90] })
    });
    match (box_hit, floor_hit) {
        (Some(b), Some(f)) => Some(if b.0 <= f.0 { b } else { f }),
        (b, f) => b.or(f),
    }
}

fn orbiting_box(k: &CameraIntrinsics, angle: f64) -> (DepthMap, RgbImage, Pose) {
    let pose = orbit_pose(angle);
    let eye = pose.translation();
    let (w, h) = (k.width, k.height);
    let mut depth = Vec::with_capacity((w * h) as usize);
    let mut rgb = Vec::with_capacity((w * h * 3) as usize);
    for v in 0..h {
        for u in 0..w {
            // camera-space point at unit depth, so the ray parameter is depth
            let dir = pose.transform_vector(k.unproject(u as f64, v as f64, 1.0));
            match trace(eye, dir) {
                Some((t, c)) => {
                    depth.push(if t <= SENSOR_MAX_RANGE_M { crate::model::depth_m_to_mm(t) } else { 0 });
                    rgb.extend_from_slice(&c);
                }
                None => {
                    depth.push(0);
                    let sky = normalize(dir)[1].max(0.0);
                    rgb.extend_from_slice(&[(140.0 + 80.0 * sky) as u8, (180.0 + 60.0 * sky) as u8, 235]);
                }
            }
        }
    }
    (
        DepthMap::new(w, h, depth).expect("sized"),
        RgbImage::new(w, h, 3, rgb).expect("sized"),
        pose,
    )
}

/// Writes the scene as a session under `store` and returns its id.
pub fn generate(store: &SessionStore, spec: &SyntheticSpec) -> Result<String, StoreError> {
    let manifest = spec.manifest();
    let mut h = store.begin_session(&manifest)?;
    for f in spec.frames() {
        store.append_frame(&mut h, &f)?;
    }
    Ok(manifest.session_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_manifest;

    #[test]
    fn ramp_rows() {
        let s = SyntheticSpec::new(SceneKind::Ramp, 5, 64, 48);
        let f = s.frame(0);
        assert_eq!(f.depth.get(0, 0), 500);
        assert_eq!(f.depth.get(63, 47), 1500);
        assert_eq!(s.session_id(), "ramp-64x48-5");
        assert_eq!(validate_manifest(&s.manifest()), Ok(()));
    }

    #[test]
    fn step_split() {
        let f = SyntheticSpec::new(SceneKind::Step, 1, 8, 6).frame(0);
        assert_eq!(f.depth.get(3, 2), 500);
        assert_eq!(f.depth.get(3, 3), 1500);
    }

    #[test]
    fn orbit_center_ray_hits_box() {
        let s = SyntheticSpec::new(SceneKind::OrbitingBox, 3, 64, 48);
        let f = s.frame(0);
        // the optical axis aims at the box center; the front face is at
        // distance |eye − center| minus the half extent along the ray
        let eye = orbit_pose(0.0).translation();
        let center = [0.0, BOX_HALF_EXTENT_M, 0.0];
        let dist = ((eye[0] - center[0]).powi(2) + (eye[1] - center[1]).powi(2) + (eye[2] - center[2]).powi(2)).sqrt();
        let d = f.depth.meters(32, 24);
        assert!(d > dist - 0.6 && d < dist, "{d} vs {dist}");
        assert!(f.pose.is_rigid(1e-9));
        assert_ne!(s.frame(1).depth, f.depth);
    }

    #[test]
    fn zero_step_orbit_is_static() {
        let mut s = SyntheticSpec::new(SceneKind::OrbitingBox, 3, 16, 12);
        s.orbit_step_deg = 0.0;
        assert_eq!(s.frame(0).depth, s.frame(2).depth);
    }

    #[test]
    fn generate_writes_session() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let spec = SyntheticSpec::new(SceneKind::Ramp, 3, 8, 6);
        let id = generate(&store, &spec).unwrap();
        assert_eq!(store.frame_count(&id).unwrap(), 3);
        assert_eq!(store.load_frame(&id, 2).unwrap(), spec.frame(2));
    }
}
