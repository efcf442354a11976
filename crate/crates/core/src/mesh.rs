//! Triangle-soup scene mesh and ray picking.
//!
//! ASCII format: one triangle per line as nine whitespace-separated numbers
//! (`x0 y0 z0 x1 y1 z1 x2 y2 z2`, millimeters, operating-room frame). Blank
//! lines and lines starting with `#` are ignored.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::RigidTransform;
use crate::triangulate::Ray;

/// Determinant / parameter epsilon for the Möller–Trumbore test.
pub const INTERSECTION_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("mesh has no triangles")]
    Empty,
    #[error("triangle {0} has a non-finite vertex")]
    NonFinite(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read mesh: {0}")]
    Io(String),
}

pub type Triangle = [Vector3<f64>; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub triangle: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeshRecord", into = "MeshRecord")]
pub struct SceneMesh {
    triangles: Vec<Triangle>,
}

#[derive(Serialize, Deserialize)]
struct MeshRecord {
    triangles: Vec<[[f64; 3]; 3]>,
}

impl TryFrom<MeshRecord> for SceneMesh {
    type Error = MeshError;
    fn try_from(r: MeshRecord) -> Result<Self, MeshError> {
        SceneMesh::new(
            r.triangles
                .into_iter()
                .map(|t| t.map(|v| Vector3::new(v[0], v[1], v[2])))
                .collect(),
        )
    }
}

impl From<SceneMesh> for MeshRecord {
    fn from(m: SceneMesh) -> Self {
        MeshRecord { triangles: m.triangles.iter().map(|t| t.map(|v| [v.x, v.y, v.z])).collect() }
    }
}

impl SceneMesh {
    pub fn new(triangles: Vec<Triangle>) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        if let Some(i) = triangles.iter().position(|t| !t.iter().all(|v| v.iter().all(|c| c.is_finite()))) {
            return Err(MeshError::NonFinite(i));
        }
        Ok(Self { triangles })
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn parse_triangle_soup(text: &str) -> Result<Self, MeshError> {
        let mut triangles = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|tok| tok.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| MeshError::Parse { line: i + 1, message: e.to_string() })?;
            if values.len() != 9 {
                return Err(MeshError::Parse {
                    line: i + 1,
                    message: format!("expected 9 numbers, found {}", values.len()),
                });
            }
            triangles.push(std::array::from_fn(|k| Vector3::new(values[3 * k], values[3 * k + 1], values[3 * k + 2])));
        }
        Self::new(triangles)
    }

    pub fn load(path: &Path) -> Result<Self, MeshError> {
        let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_triangle_soup(&text)
    }

    pub fn to_triangle_soup(&self) -> String {
        let mut out = String::new();
        for t in &self.triangles {
            let nums: Vec<String> = t.iter().flat_map(|v| v.iter().map(|c| c.to_string())).collect();
            out.push_str(&nums.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self { triangles: self.triangles.iter().map(|tri| tri.map(|v| t.transform_point(&v))).collect() }
    }

    pub fn merge(mut self, other: &SceneMesh) -> Self {
        self.triangles.extend_from_slice(&other.triangles);
        self
    }

    /// Planar quad split into two triangles; corners in winding order.
    pub fn quad(corners: [Vector3<f64>; 4]) -> Self {
        Self {
            triangles: vec![[corners[0], corners[1], corners[2]], [corners[0], corners[2], corners[3]]],
        }
    }

    /// Closed square-section box around the segment `a → b`.
    pub fn segment_box(a: &Vector3<f64>, b: &Vector3<f64>, half_width: f64) -> Option<Self> {
        let axis = b - a;
        if axis.norm() < 1e-9 || half_width <= 0.0 {
            return None;
        }
        let dir = axis.normalize();
        let helper = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = dir.cross(&helper).normalize() * half_width;
        let v = dir.cross(&u).normalize() * half_width;
        let corner = |p: &Vector3<f64>, su: f64, sv: f64| p + u * su + v * sv;
        let ring = |p: &Vector3<f64>| [corner(p, -1.0, -1.0), corner(p, 1.0, -1.0), corner(p, 1.0, 1.0), corner(p, -1.0, 1.0)];
        let (lo, hi) = (ring(a), ring(b));
        let mut triangles = Vec::with_capacity(12);
        for k in 0..4 {
            let n = (k + 1) % 4;
            triangles.push([lo[k], lo[n], hi[n]]);
            triangles.push([lo[k], hi[n], hi[k]]);
        }
        triangles.push([lo[0], lo[2], lo[1]]);
        triangles.push([lo[0], lo[3], lo[2]]);
        triangles.push([hi[0], hi[1], hi[2]]);
        triangles.push([hi[0], hi[2], hi[3]]);
        Some(Self { triangles })
    }

    /// Nearest intersection with positive ray parameter; ties go to the
    /// lowest triangle index.
    pub fn nearest_hit(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, tri) in self.triangles.iter().enumerate() {
            if let Some(t) = intersect_triangle(ray, tri) {
                if best.is_none_or(|b| t < b.distance) {
                    best = Some(Hit { distance: t, triangle: i });
                }
            }
        }
        best
    }
}

/// Möller–Trumbore ray/triangle test. Returns the ray parameter of the hit
/// (a distance, since ray directions are unit length).
pub fn intersect_triangle(ray: &Ray, tri: &Triangle) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.direction().cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < INTERSECTION_EPSILON {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin() - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction().dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > INTERSECTION_EPSILON).then_some(t)
}
