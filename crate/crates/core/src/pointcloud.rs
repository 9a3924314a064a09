//! Colored world-space point clouds from depth maps and rendered layers,
//! with binary PCD output.

use std::fmt::Write as _;
use std::path::Path;

use crate::model::{nearest_index, CameraIntrinsics, DepthMap, Pose, RgbImage};
use crate::render::RenderLayer;
use crate::store::write_atomic;

#[derive(Debug, thiserror::Error)]
pub enum PointCloudError {
    #[error("no valid depth pixels")]
    NoValidPixels,
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("storage unavailable: {0}")]
    StorageUnavailable(#[from] std::io::Error),
    #[error("malformed pcd: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredPointSet {
    pub points: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
}

impl ColoredPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: [f64; 3], c: [u8; 3]) {
        self.points.push([p[0] as f32, p[1] as f32, p[2] as f32]);
        self.colors.push(c);
    }

    pub fn extend(&mut self, other: &ColoredPointSet) {
        self.points.extend_from_slice(&other.points);
        self.colors.extend_from_slice(&other.colors);
    }
}

/// Back-projects every valid depth pixel on the `stride` grid into world
/// space. `k` is rescaled to the depth resolution; colors come from the
/// nearest RGB pixel.
pub fn unproject(depth: &DepthMap, rgb: &RgbImage, k: &CameraIntrinsics, cam_pose: &Pose, stride: u32) -> Result<ColoredPointSet, PointCloudError> {
    if stride == 0 {
        return Err(PointCloudError::ZeroStride);
    }
    let (dw, dh) = (depth.width(), depth.height());
    let k = k.scaled_to(dw, dh);
    let mut out = ColoredPointSet::default();
    for v in (0..dh).step_by(stride as usize) {
        let ry = nearest_index(v as usize, dh as usize, rgb.height() as usize) as u32;
        for u in (0..dw).step_by(stride as usize) {
            let mm = depth.get(u, v);
            if mm == 0 {
                continue;
            }
            let rx = nearest_index(u as usize, dw as usize, rgb.width() as usize) as u32;
            let p = k.unproject(u as f64, v as f64, mm as f64 / 1000.0);
            out.push(cam_pose.transform_point(p), rgb.rgb(rx, ry));
        }
    }
    if out.is_empty() {
        return Err(PointCloudError::NoValidPixels);
    }
    Ok(out)
}

/// Back-projects the covered pixels of a rendered layer using its z-buffer.
pub fn virtual_to_points(layer: &RenderLayer, k: &CameraIntrinsics, cam_pose: &Pose, stride: u32) -> Result<ColoredPointSet, PointCloudError> {
    if stride == 0 {
        return Err(PointCloudError::ZeroStride);
    }
    let (w, h) = (layer.width(), layer.height());
    let k = k.scaled_to(w, h);
    let mut out = ColoredPointSet::default();
    for v in (0..h).step_by(stride as usize) {
        for u in (0..w).step_by(stride as usize) {
            let i = (v * w + u) as usize;
            if layer.alpha(i) == 0 {
                continue;
            }
            let p = k.unproject(u as f64, v as f64, layer.zbuffer[i] as f64);
            out.push(cam_pose.transform_point(p), layer.color.rgb(u, v));
        }
    }
    Ok(out)
}

fn pack_rgb(c: [u8; 3]) -> f32 {
    f32::from_bits(((c[0] as u32) << 16) | ((c[1] as u32) << 8) | c[2] as u32)
}

fn unpack_rgb(f: f32) -> [u8; 3] {
    let b = f.to_bits();
    [(b >> 16) as u8, (b >> 8) as u8, b as u8]
}

/// Binary PCD v0.7 with fields `x y z rgb`.
pub fn encode_pcd(cloud: &ColoredPointSet) -> Vec<u8> {
    let n = cloud.len();
    let header = format!(
        "VERSION 0.7\nFIELDS x y z rgb\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA binary\n"
    );
    let mut out = Vec::with_capacity(header.len() + n * 16);
    out.extend_from_slice(header.as_bytes());
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&pack_rgb(*c).to_le_bytes());
    }
    out
}

/// Parses PCD produced by [`encode_pcd`].
pub fn parse_pcd(bytes: &[u8]) -> Result<ColoredPointSet, PointCloudError> {
    let bad = |m: &str| PointCloudError::Malformed(m.to_string());
    let mut pos = 0;
    let mut points = None;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header not terminated"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not utf-8"))?;
        pos += end + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("FIELDS") => {
                if parts.collect::<Vec<_>>() != ["x", "y", "z", "rgb"] {
                    return Err(bad("expected fields x y z rgb"));
                }
            }
            Some("POINTS") => {
                points = Some(
                    parts
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| bad("bad POINTS"))?,
                )
            }
            Some("DATA") => {
                if parts.next() != Some("binary") {
                    return Err(bad("only binary data is supported"));
                }
                break;
            }
            _ => {}
        }
    }
    let n = points.ok_or_else(|| bad("missing POINTS"))?;
    let body = &bytes[pos..];
    if body.len() != n * 16 {
        return Err(bad(&format!("expected {} data bytes, found {}", n * 16, body.len())));
    }
    let mut cloud = ColoredPointSet::default();
    for rec in body.chunks_exact(16) {
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        cloud.points.push([f(0), f(4), f(8)]);
        cloud.colors.push(unpack_rgb(f(12)));
    }
    Ok(cloud)
}

/// Concatenates both clouds and writes them as binary PCD. Returns the file
/// size in bytes.
pub fn merge_and_write_pcd(real: &ColoredPointSet, virt: &ColoredPointSet, path: &Path) -> Result<usize, PointCloudError> {
    let mut merged = ColoredPointSet {
        points: Vec::with_capacity(real.len() + virt.len()),
        colors: Vec::with_capacity(real.len() + virt.len()),
    };
    merged.extend(real);
    merged.extend(virt);
    let bytes = encode_pcd(&merged);
    write_atomic(path, &bytes)?;
    Ok(bytes.len())
}

/// ASCII PLY with the same fields, for size comparisons.
pub fn encode_ply_ascii(cloud: &ColoredPointSet) -> Vec<u8> {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        let _ = writeln!(s, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]);
    }
    s.into_bytes()
}
