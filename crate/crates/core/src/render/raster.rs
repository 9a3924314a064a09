//! Scanline-free triangle rasterizer with a float depth buffer.
//!
//! Samples are taken at integer pixel centers. Edges follow the top-left fill
//! rule so triangles sharing an edge never both cover a pixel on it.

use crate::model::{dot, normalize, CameraIntrinsics, Pose};

use super::mesh::TriangleMesh;

/// Nearest camera-space depth a triangle is kept at; geometry closer than
/// this is clipped.
pub const NEAR_PLANE_M: f64 = 1e-3;

pub const NO_OBJECT: u32 = u32::MAX;

/// Per-pixel surface attributes of the nearest visible triangle.
#[derive(Debug, Clone)]
pub struct GBuffer {
    width: u32,
    height: u32,
    /// Camera distance along −Z in meters, `+inf` where empty.
    pub depth: Vec<f32>,
    /// Interpolated world-space normal.
    pub normal: Vec<[f32; 3]>,
    /// Slot of the covering object, [`NO_OBJECT`] where empty.
    pub object: Vec<u32>,
}

impl GBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        GBuffer {
            width,
            height,
            depth: vec![f32::INFINITY; n],
            normal: vec![[0.0; 3]; n],
            object: vec![NO_OBJECT; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn clear(&mut self) {
        self.depth.fill(f32::INFINITY);
        self.object.fill(NO_OBJECT);
    }

    pub fn covered(&self, i: usize) -> bool {
        self.object[i] != NO_OBJECT
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    pos: [f64; 3],
    normal: [f64; 3],
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Clips a polygon against `z ≤ −NEAR_PLANE_M`. Returns the vertex count.
fn clip_near(input: &[ClipVertex; 3], out: &mut [ClipVertex; 4]) -> usize {
    let inside = |v: &ClipVertex| v.pos[2] <= -NEAR_PLANE_M;
    let mut n = 0;
    for i in 0..3 {
        let a = input[i];
        let b = input[(i + 1) % 3];
        match (inside(&a), inside(&b)) {
            (true, true) => {
                out[n] = b;
                n += 1;
            }
            (true, false) | (false, true) => {
                let t = (-NEAR_PLANE_M - a.pos[2]) / (b.pos[2] - a.pos[2]);
                out[n] = ClipVertex {
                    pos: lerp3(a.pos, b.pos, t),
                    normal: lerp3(a.normal, b.normal, t),
                };
                n += 1;
                if inside(&b) {
                    out[n] = b;
                    n += 1;
                }
            }
            (false, false) => {}
        }
    }
    n
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_depth: f64,
    normal: [f64; 3],
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

#[inline]
fn is_top_left(ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let (ex, ey) = (bx - ax, by - ay);
    ey < 0.0 || (ey == 0.0 && ex > 0.0)
}

fn raster_triangle(gb: &mut GBuffer, v: [ScreenVertex; 3], slot: u32) {
    let mut v = v;
    let mut area = edge(v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        v.swap(1, 2);
        area = -area;
    }
    let (w, h) = (gb.width as i64, gb.height as i64);
    let min_x = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let max_x = (v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor() as i64).min(w - 1);
    let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let max_y = (v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor() as i64).min(h - 1);
    if min_x > max_x || min_y > max_y {
        return;
    }
    // edge i is opposite vertex i
    let edges = [(1, 2), (2, 0), (0, 1)];
    let top_left = edges.map(|(a, b)| is_top_left(v[a].x, v[a].y, v[b].x, v[b].y));
    for py in min_y..=max_y {
        let yf = py as f64;
        for px in min_x..=max_x {
            let xf = px as f64;
            let mut bary = [0.0; 3];
            let mut inside = true;
            for (k, &(a, b)) in edges.iter().enumerate() {
                let e = edge(v[a].x, v[a].y, v[b].x, v[b].y, xf, yf);
                if e < 0.0 || (e == 0.0 && !top_left[k]) {
                    inside = false;
                    break;
                }
                bary[k] = e / area;
            }
            if !inside {
                continue;
            }
            let inv_d = bary[0] * v[0].inv_depth + bary[1] * v[1].inv_depth + bary[2] * v[2].inv_depth;
            if inv_d <= 0.0 {
                continue;
            }
            let d = 1.0 / inv_d;
            let i = py as usize * gb.width as usize + px as usize;
            if d as f32 >= gb.depth[i] {
                continue;
            }
            let mut n = [0.0; 3];
            for (k, vk) in v.iter().enumerate() {
                let wgt = bary[k] * vk.inv_depth * d;
                for c in 0..3 {
                    n[c] += wgt * vk.normal[c];
                }
            }
            let n = normalize(n);
            gb.depth[i] = d as f32;
            gb.normal[i] = [n[0] as f32, n[1] as f32, n[2] as f32];
            gb.object[i] = slot;
        }
    }
}

/// Rasterizes `mesh` placed by `obj_pose` with uniform `scale` into `gb`,
/// seen from the camera-to-world pose `cam`. Back faces are culled.
pub fn rasterize_mesh(
    gb: &mut GBuffer,
    mesh: &TriangleMesh,
    obj_pose: &Pose,
    scale: f64,
    cam: &Pose,
    k: &CameraIntrinsics,
    slot: u32,
) {
    let world_to_cam = cam.inverse();
    let model_to_cam = world_to_cam.compose(obj_pose);
    let cam_vertices: Vec<[f64; 3]> = mesh
        .vertices
        .iter()
        .map(|v| model_to_cam.transform_point([v[0] * scale, v[1] * scale, v[2] * scale]))
        .collect();
    let world_normals: Vec<[f64; 3]> = mesh
        .normals
        .iter()
        .map(|n| normalize(obj_pose.transform_vector(*n)))
        .collect();

    let mut clipped = [ClipVertex {
        pos: [0.0; 3],
        normal: [0.0; 3],
    }; 4];
    for face in &mesh.faces {
        let p = face.vertices.map(|i| cam_vertices[i]);
        // the camera sits at the origin: a front face has its normal toward it
        let fnorm = crate::model::cross(crate::model::sub(p[1], p[0]), crate::model::sub(p[2], p[0]));
        if dot(fnorm, p[0]) >= 0.0 {
            continue;
        }
        let input = [0, 1, 2].map(|j| ClipVertex {
            pos: p[j],
            normal: world_normals[face.normals[j]],
        });
        let n = clip_near(&input, &mut clipped);
        if n < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = clipped[..n]
            .iter()
            .map(|c| {
                let d = -c.pos[2];
                ScreenVertex {
                    x: k.fx * (c.pos[0] / d) + k.cx,
                    y: k.cy - k.fy * (c.pos[1] / d),
                    inv_depth: 1.0 / d,
                    normal: c.normal,
                }
            })
            .collect();
        for j in 1..n - 1 {
            raster_triangle(gb, [screen[0], screen[j], screen[j + 1]], slot);
        }
    }
}
