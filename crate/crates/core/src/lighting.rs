//! Light-probe rendering under equirectangular environment maps: diffuse,
//! glossy ("matte") and mirror spheres, plus image-based relighting of meshes.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imageio::tonemap;
use crate::metrics::RadianceView;
use crate::model::{dot, normalize, sub, CameraIntrinsics, EnvironmentMap, Pose, RgbImage};
use crate::render::{rasterize_mesh, GBuffer, RenderLayer, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Diffuse,
    Matte,
    Mirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeMaterial {
    pub kind: ProbeKind,
    pub albedo: [f64; 3],
    /// Only used by [`ProbeKind::Matte`].
    pub phong_exponent: f64,
}

impl ProbeMaterial {
    pub const DEFAULT_PHONG_EXPONENT: f64 = 32.0;

    pub fn diffuse(albedo: [f64; 3]) -> Self {
        ProbeMaterial {
            kind: ProbeKind::Diffuse,
            albedo,
            phong_exponent: Self::DEFAULT_PHONG_EXPONENT,
        }
    }

    pub fn matte(albedo: [f64; 3], phong_exponent: f64) -> Self {
        ProbeMaterial {
            kind: ProbeKind::Matte,
            albedo,
            phong_exponent,
        }
    }

    pub fn mirror() -> Self {
        ProbeMaterial {
            kind: ProbeKind::Mirror,
            albedo: [1.0; 3],
            phong_exponent: Self::DEFAULT_PHONG_EXPONENT,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.phong_exponent > 0.0 && self.phong_exponent.is_finite() && self.albedo.iter().all(|a| (0.0..=1.0).contains(a))
    }
}

/// Nearest-texel lookup for a unit direction. θ is measured from +Y, φ from
/// −Z toward +X.
pub fn sample_env(map: &EnvironmentMap, dir: [f64; 3]) -> [f32; 3] {
    let (col, row) = texel_of(map, dir);
    map.texel(col, row)
}

fn texel_of(map: &EnvironmentMap, dir: [f64; 3]) -> (u32, u32) {
    let (w, h) = (map.width(), map.height());
    let theta = dir[1].clamp(-1.0, 1.0).acos();
    let mut phi = dir[0].atan2(-dir[2]);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    let col = ((phi / (2.0 * PI) * w as f64) as u32).min(w - 1);
    let row = ((theta / PI * h as f64) as u32).min(h - 1);
    (col, row)
}

/// Unit direction through the center of texel (`col`, `row`).
pub fn texel_direction(map: &EnvironmentMap, col: u32, row: u32) -> [f64; 3] {
    let theta = (row as f64 + 0.5) / map.height() as f64 * PI;
    let phi = (col as f64 + 0.5) / map.width() as f64 * 2.0 * PI;
    [theta.sin() * phi.sin(), theta.cos(), -theta.sin() * phi.cos()]
}

/// Nonzero texels with radiance premultiplied by their solid angle.
struct TexelTable {
    dirs: Vec<[f64; 3]>,
    weighted: Vec<[f64; 3]>,
}

impl TexelTable {
    fn new(map: &EnvironmentMap) -> Self {
        let (w, h) = (map.width(), map.height());
        let dphi_dtheta = (2.0 * PI / w as f64) * (PI / h as f64);
        let mut dirs = Vec::new();
        let mut weighted = Vec::new();
        for row in 0..h {
            let theta = (row as f64 + 0.5) / h as f64 * PI;
            let d_omega = dphi_dtheta * theta.sin();
            for col in 0..w {
                let l = map.texel(col, row);
                if l == [0.0; 3] {
                    continue;
                }
                dirs.push(texel_direction(map, col, row));
                weighted.push([l[0] as f64 * d_omega, l[1] as f64 * d_omega, l[2] as f64 * d_omega]);
            }
        }
        TexelTable { dirs, weighted }
    }

    /// `Σ L(ω) · max(0, axis·ω)^power · dω`
    fn lobe(&self, axis: [f64; 3], power: f64) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let cosine = power == 1.0;
        for (d, l) in self.dirs.iter().zip(&self.weighted) {
            let c = dot(axis, *d);
            if c <= 0.0 {
                continue;
            }
            let f = if cosine { c } else { c.powf(power) };
            acc[0] += l[0] * f;
            acc[1] += l[1] * f;
            acc[2] += l[2] * f;
        }
        acc
    }
}

fn reflect(v: [f64; 3], n: [f64; 3]) -> [f64; 3] {
    let k = 2.0 * dot(n, v);
    normalize([k * n[0] - v[0], k * n[1] - v[1], k * n[2] - v[2]])
}

/// Energy normalization of the `cos^α` lobe; integrates to one over the
/// hemisphere.
pub fn phong_normalization(alpha: f64) -> f64 {
    (alpha + 1.0) / (2.0 * PI)
}

/// Outgoing radiance for surface normal `n` seen from direction `v`
/// (pointing toward the viewer).
fn shade_exact(map: &EnvironmentMap, table: &TexelTable, m: &ProbeMaterial, n: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    match m.kind {
        ProbeKind::Mirror => {
            let l = sample_env(map, reflect(v, n));
            [l[0] as f64, l[1] as f64, l[2] as f64]
        }
        ProbeKind::Diffuse => {
            let e = table.lobe(n, 1.0);
            [0, 1, 2].map(|c| m.albedo[c] / PI * e[c])
        }
        ProbeKind::Matte => {
            let a = m.phong_exponent;
            let e = table.lobe(reflect(v, n), a);
            let k = phong_normalization(a);
            [0, 1, 2].map(|c| m.albedo[c] * k * e[c])
        }
    }
}

/// R×R linear radiance image of a probe sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRender {
    pub resolution: u32,
    pub image: Vec<f32>,
    pub mask: Vec<bool>,
}

impl ProbeRender {
    pub fn view(&self) -> RadianceView<'_> {
        RadianceView {
            width: self.resolution,
            height: self.resolution,
            values: &self.image,
            mask: Some(&self.mask),
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y * self.resolution + x) as usize * 3;
        [self.image[i], self.image[i + 1], self.image[i + 2]]
    }

    /// 8-bit display version.
    pub fn tonemapped(&self) -> RgbImage {
        let r = self.resolution;
        RgbImage::new(r, r, 3, self.image.iter().map(|&v| tonemap(v)).collect()).expect("sized buffer")
    }
}

pub const MIN_PROBE_RESOLUTION: u32 = 8;

/// Sphere coordinates of pixel (`px`, `py`) in an R×R probe image, or `None`
/// outside the silhouette.
pub fn probe_normal(px: u32, py: u32, r: u32) -> Option<[f64; 3]> {
    let x = (px as f64 + 0.5) / r as f64 * 2.0 - 1.0;
    let y = 1.0 - (py as f64 + 0.5) / r as f64 * 2.0;
    let rr = x * x + y * y;
    (rr <= 1.0).then(|| [x, y, (1.0 - rr).sqrt()])
}

/// Orthographic render of a unit sphere viewed along −Z.
///
/// # Panics
/// If `r` is below [`MIN_PROBE_RESOLUTION`].
pub fn render_probe(map: &EnvironmentMap, material: &ProbeMaterial, r: u32) -> ProbeRender {
    assert!(r >= MIN_PROBE_RESOLUTION, "probe resolution must be at least {MIN_PROBE_RESOLUTION}");
    let table = TexelTable::new(map);
    let view = [0.0, 0.0, 1.0];
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..r)
        .into_par_iter()
        .map(|py| {
            let mut img = vec![0.0f32; r as usize * 3];
            let mut mask = vec![false; r as usize];
            for px in 0..r {
                if let Some(n) = probe_normal(px, py, r) {
                    let c = shade_exact(map, &table, material, n, view);
                    let i = px as usize;
                    img[i * 3..i * 3 + 3].copy_from_slice(&c.map(|v| v as f32));
                    mask[i] = true;
                }
            }
            (img, mask)
        })
        .collect();
    let mut image = Vec::with_capacity(r as usize * r as usize * 3);
    let mut mask = Vec::with_capacity(r as usize * r as usize);
    for (img, m) in rows {
        image.extend(img);
        mask.extend(m);
    }
    ProbeRender {
        resolution: r,
        image,
        mask,
    }
}

/// Precomputed lobe integrals over a direction grid, used to shade many
/// pixels quickly.
struct PrefilteredEnv {
    grid: EnvironmentMap,
}

impl PrefilteredEnv {
    const HEIGHT: u32 = 32;

    fn new(map: &EnvironmentMap, material: &ProbeMaterial) -> Self {
        let table = TexelTable::new(map);
        let (w, h) = (2 * Self::HEIGHT, Self::HEIGHT);
        let proto = EnvironmentMap::constant(w, h, [0.0; 3]).expect("static dims");
        let (power, k) = match material.kind {
            ProbeKind::Diffuse => (1.0, 1.0 / PI),
            _ => (material.phong_exponent, phong_normalization(material.phong_exponent)),
        };
        let values: Vec<f32> = (0..h)
            .into_par_iter()
            .flat_map_iter(|row| {
                let table = &table;
                let proto = &proto;
                (0..w).flat_map(move |col| {
                    let e = table.lobe(texel_direction(proto, col, row), power);
                    e.map(|v| (v * k) as f32)
                })
            })
            .collect();
        PrefilteredEnv {
            grid: EnvironmentMap::new(w, h, values).expect("finite radiance"),
        }
    }
}

/// Image-based shading of surface points under one environment map.
pub struct EnvShader<'a> {
    map: &'a EnvironmentMap,
    material: ProbeMaterial,
    prefiltered: Option<PrefilteredEnv>,
}

impl<'a> EnvShader<'a> {
    pub fn new(map: &'a EnvironmentMap, material: ProbeMaterial) -> Self {
        let prefiltered = match material.kind {
            ProbeKind::Mirror => None,
            _ => Some(PrefilteredEnv::new(map, &material)),
        };
        EnvShader {
            map,
            material,
            prefiltered,
        }
    }

    /// Linear radiance leaving a surface with normal `n` toward the viewer
    /// direction `v`, for unit albedo.
    pub fn radiance(&self, n: [f64; 3], v: [f64; 3]) -> [f64; 3] {
        let dir = match self.material.kind {
            ProbeKind::Diffuse => n,
            _ => reflect(v, n),
        };
        let l = match &self.prefiltered {
            Some(pf) => sample_env(&pf.grid, dir),
            None => sample_env(self.map, dir),
        };
        [l[0] as f64, l[1] as f64, l[2] as f64]
    }

    /// Tonemapped color with the given albedo.
    pub fn shade(&self, n: [f64; 3], v: [f64; 3], albedo: [f64; 3]) -> [u8; 3] {
        let l = self.radiance(n, v);
        [0, 1, 2].map(|c| tonemap((albedo[c] * l[c]) as f32))
    }

    pub fn material(&self) -> &ProbeMaterial {
        &self.material
    }
}

/// Rasterizes `mesh` and shades every covered pixel with `material` under
/// `map`. Colors are tonemapped to 8 bits for compositing.
pub fn relight_object(
    mesh: &TriangleMesh,
    pose: &Pose,
    scale: f64,
    map: &EnvironmentMap,
    material: &ProbeMaterial,
    cam: &Pose,
    k: &CameraIntrinsics,
) -> RenderLayer {
    let mut gb = GBuffer::new(k.width, k.height);
    rasterize_mesh(&mut gb, mesh, pose, scale, cam, k, 0);
    let mut layer = RenderLayer::empty(k.width, k.height);
    let shader = EnvShader::new(map, *material);
    layer.fill_from(&gb, |i| {
        let v = view_dir(cam, k, i, gb.depth[i]);
        shader.shade(gb.normal[i].map(|x| x as f64), v, material.albedo)
    });
    layer
}

/// Unit vector from the surface seen at pixel `i` (row-major) and camera
/// depth `depth` back toward the camera, in world space.
pub fn view_dir(cam: &Pose, k: &CameraIntrinsics, i: usize, depth: f32) -> [f64; 3] {
    let w = k.width as usize;
    let (x, y) = ((i % w) as f64, (i / w) as f64);
    let p = cam.transform_point(k.unproject(x, y, depth as f64));
    normalize(sub(cam.translation(), p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(w: u32, h: u32, col: u32, row: u32, value: f32) -> EnvironmentMap {
        let mut v = vec![0.0; (w * h * 3) as usize];
        let i = ((row * w + col) * 3) as usize;
        v[i..i + 3].fill(value);
        EnvironmentMap::new(w, h, v).unwrap()
    }

    #[test]
    fn sampling_poles_and_constant() {
        let mut v = vec![0.0; 8 * 4 * 3];
        v[..8 * 3].fill(1.0); // top row
        v[3 * 8 * 3..].fill(2.0); // bottom row
        let m = EnvironmentMap::new(8, 4, v).unwrap();
        assert_eq!(sample_env(&m, [0.0, 1.0, 0.0]), [1.0; 3]);
        assert_eq!(sample_env(&m, [0.0, -1.0, 0.0]), [2.0; 3]);
        let c = EnvironmentMap::constant(8, 4, [0.3, 0.2, 0.1]).unwrap();
        assert_eq!(sample_env(&c, normalize([0.3, -0.2, 0.7])), [0.3, 0.2, 0.1]);
    }

    #[test]
    fn texel_direction_round_trips() {
        let m = EnvironmentMap::constant(16, 8, [1.0; 3]).unwrap();
        for row in 0..8 {
            for col in 0..16 {
                assert_eq!(texel_of(&m, texel_direction(&m, col, row)), (col, row));
            }
        }
    }

    #[test]
    fn mirror_constant_map() {
        let m = EnvironmentMap::constant(32, 16, [1.0; 3]).unwrap();
        let p = render_probe(&m, &ProbeMaterial::mirror(), 16);
        for (i, &covered) in p.mask.iter().enumerate() {
            let px = &p.image[i * 3..i * 3 + 3];
            if covered {
                assert_eq!(px, [1.0; 3]);
            } else {
                assert_eq!(px, [0.0; 3]);
            }
        }
    }

    #[test]
    fn center_pixel_mirror_looks_back_at_viewer() {
        // the center normal is +Z, so the reflection is the view direction
        let m = EnvironmentMap::constant(32, 16, [0.0; 3]).unwrap();
        let (col, row) = texel_of(&m, [0.0, 0.0, 1.0]);
        let m = one_hot(32, 16, col, row, 5.0);
        let p = render_probe(&m, &ProbeMaterial::mirror(), 9);
        assert_eq!(p.pixel(4, 4), [5.0; 3]);
    }

    #[test]
    fn white_furnace_small() {
        let m = EnvironmentMap::constant(128, 64, [1.0; 3]).unwrap();
        for mat in [ProbeMaterial::diffuse([1.0; 3]), ProbeMaterial::matte([1.0; 3], 32.0)] {
            let p = render_probe(&m, &mat, 8);
            for (i, &c) in p.mask.iter().enumerate() {
                if c {
                    assert!((p.image[i * 3] - 1.0).abs() < 0.02, "{mat:?}: {}", p.image[i * 3]);
                }
            }
        }
    }

    #[test]
    fn albedo_zero_is_black() {
        let m = EnvironmentMap::constant(32, 16, [1.0; 3]).unwrap();
        let k = CameraIntrinsics {
            fx: 50.0,
            fy: 50.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        };
        let layer = relight_object(
            &TriangleMesh::uv_sphere(16, 8),
            &Pose::from_translation([0.0, 0.0, -2.0]),
            1.0,
            &m,
            &ProbeMaterial::diffuse([0.0; 3]),
            &Pose::IDENTITY,
            &k,
        );
        assert!(layer.covered_count() > 0);
        for px in layer.color.values().chunks_exact(4) {
            assert_eq!(&px[..3], [0, 0, 0]);
        }
    }
}
