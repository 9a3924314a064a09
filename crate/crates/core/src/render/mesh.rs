use std::f64::consts::PI;
use std::path::Path;

use crate::model::{cross, normalize, sub};

use super::RenderError;

/// A triangle with vertex and normal indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub vertices: [usize; 3],
    pub normals: [usize; 3],
}

/// Indexed triangle mesh in meters. Faces without normals in the source
/// reference a computed per-face normal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub faces: Vec<Face>,
}

impl TriangleMesh {
    /// Builds a mesh from positions and CCW triangles, computing per-face
    /// normals.
    pub fn from_triangles(vertices: Vec<[f64; 3]>, triangles: &[[usize; 3]]) -> Result<Self, RenderError> {
        if triangles.is_empty() {
            return Err(RenderError::EmptyMesh);
        }
        let mut normals = Vec::with_capacity(triangles.len());
        let mut faces = Vec::with_capacity(triangles.len());
        for t in triangles {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(RenderError::Parse {
                    line: 0,
                    message: format!("triangle {t:?} references a missing vertex"),
                });
            }
            let n = face_normal(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            let ni = normals.len();
            normals.push(n);
            faces.push(Face {
                vertices: *t,
                normals: [ni; 3],
            });
        }
        Ok(TriangleMesh {
            vertices,
            normals,
            faces,
        })
    }

    pub fn triangle_count(&self) -> usize {
        self.faces.len()
    }

    /// Unit square in the XY plane centered at the origin, facing +Z.
    pub fn plane() -> Self {
        TriangleMesh::from_triangles(
            vec![[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.5, 0.5, 0.0], [-0.5, 0.5, 0.0]],
            &[[0, 1, 2], [0, 2, 3]],
        )
        .expect("static mesh")
    }

    /// Axis-aligned unit cube centered at the origin.
    pub fn cube() -> Self {
        let v = vec![
            [-0.5, -0.5, -0.5],
            [0.5, -0.5, -0.5],
            [0.5, 0.5, -0.5],
            [-0.5, 0.5, -0.5],
            [-0.5, -0.5, 0.5],
            [0.5, -0.5, 0.5],
            [0.5, 0.5, 0.5],
            [-0.5, 0.5, 0.5],
        ];
        let t = [
            [4, 5, 6],
            [4, 6, 7], // +z
            [1, 0, 3],
            [1, 3, 2], // −z
            [5, 1, 2],
            [5, 2, 6], // +x
            [0, 4, 7],
            [0, 7, 3], // −x
            [7, 6, 2],
            [7, 2, 3], // +y
            [0, 1, 5],
            [0, 5, 4], // −y
        ];
        TriangleMesh::from_triangles(v, &t).expect("static mesh")
    }

    /// UV sphere of radius 0.5 with smooth vertex normals;
    /// `2 · segments · (rings − 1)` triangles.
    pub fn uv_sphere(segments: usize, rings: usize) -> Self {
        let segments = segments.max(3);
        let rings = rings.max(2);
        let mut vertices = vec![[0.0, 0.5, 0.0]];
        for r in 1..rings {
            let theta = PI * r as f64 / rings as f64;
            for s in 0..segments {
                let phi = 2.0 * PI * s as f64 / segments as f64;
                vertices.push([
                    0.5 * theta.sin() * phi.sin(),
                    0.5 * theta.cos(),
                    0.5 * theta.sin() * phi.cos(),
                ]);
            }
        }
        vertices.push([0.0, -0.5, 0.0]);
        let bottom = vertices.len() - 1;
        let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
        let mut tris = Vec::new();
        for s in 0..segments {
            tris.push([0, ring(1, s), ring(1, s + 1)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b, c, d) = (ring(r, s), ring(r + 1, s), ring(r + 1, s + 1), ring(r, s + 1));
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            }
        }
        for s in 0..segments {
            tris.push([bottom, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        }
        let normals: Vec<[f64; 3]> = vertices.iter().map(|&v| normalize(v)).collect();
        let faces = tris
            .into_iter()
            .map(|t| Face {
                vertices: t,
                normals: t,
            })
            .collect();
        TriangleMesh {
            vertices,
            normals,
            faces,
        }
    }
}

fn face_normal(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    normalize(cross(sub(b, a), sub(c, a)))
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh, RenderError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| RenderError::MeshUnavailable {
        mesh_ref: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_obj(&text)
}

fn resolve_index(token: &str, len: usize, line: usize, what: &str) -> Result<usize, RenderError> {
    let err = |message: String| RenderError::Parse { line, message };
    let raw: i64 = token
        .parse()
        .map_err(|_| err(format!("bad {what} index {token:?}")))?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        len as i64 + raw
    } else {
        return Err(err(format!("{what} index 0 is invalid")));
    };
    if idx < 0 || idx as usize >= len {
        return Err(err(format!("{what} index {raw} out of range ({len} defined)")));
    }
    Ok(idx as usize)
}

/// Parses the `v`/`vn`/`f` subset of Wavefront OBJ. Polygons are fan
/// triangulated; faces without normals get a computed face normal.
pub fn parse_obj(text: &str) -> Result<TriangleMesh, RenderError> {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut normals: Vec<[f64; 3]> = Vec::new();
    // (vertex indices, optional normal indices) per polygon
    let mut polys: Vec<(Vec<usize>, Option<Vec<usize>>, usize)> = Vec::new();
    let mut warned = std::collections::HashSet::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let keyword = parts.next().unwrap_or("");
        let floats = |parts: std::str::SplitWhitespace| -> Result<[f64; 3], RenderError> {
            let vals: Vec<f64> = parts
                .take(3)
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| RenderError::Parse {
                    line: line_no,
                    message: format!("bad number in {raw:?}"),
                })?;
            if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
                return Err(RenderError::Parse {
                    line: line_no,
                    message: "expected three finite coordinates".into(),
                });
            }
            Ok([vals[0], vals[1], vals[2]])
        };
        match keyword {
            "v" => vertices.push(floats(parts)?),
            "vn" => normals.push(normalize(floats(parts)?)),
            "f" => {
                let mut vi = Vec::new();
                let mut ni = Vec::new();
                let mut all_normals = true;
                for tok in parts {
                    let mut fields = tok.split('/');
                    let v = fields.next().unwrap_or("");
                    vi.push(resolve_index(v, vertices.len(), line_no, "vertex")?);
                    let _tex = fields.next();
                    match fields.next().filter(|s| !s.is_empty()) {
                        Some(n) => ni.push(resolve_index(n, normals.len(), line_no, "normal")?),
                        None => all_normals = false,
                    }
                }
                if vi.len() < 3 {
                    return Err(RenderError::Parse {
                        line: line_no,
                        message: format!("face needs at least 3 vertices, got {}", vi.len()),
                    });
                }
                polys.push((vi, all_normals.then_some(ni), line_no));
            }
            other => {
                if warned.insert(other.to_string()) {
                    log::warn!("obj line {line_no}: ignoring unsupported record {other:?}");
                }
            }
        }
    }

    let mut faces = Vec::new();
    for (vi, ni, _) in polys {
        for k in 1..vi.len() - 1 {
            let tri = [vi[0], vi[k], vi[k + 1]];
            let tri_normals = match &ni {
                Some(n) => [n[0], n[k], n[k + 1]],
                None => {
                    let n = face_normal(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
                    normals.push(n);
                    [normals.len() - 1; 3]
                }
            };
            faces.push(Face {
                vertices: tri,
                normals: tri_normals,
            });
        }
    }
    if faces.is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    Ok(TriangleMesh {
        vertices,
        normals,
        faces,
    })
}
