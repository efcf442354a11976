//! Pinhole observer cameras and their mirrored ("reversed") counterparts.
//!
//! Conventions: camera frame has x right, y down, z along the principal ray
//! away from the camera. An [`ObserverPose`] maps operating-room (world)
//! coordinates into the camera frame, so a world point `X` projects to
//! `K (R X + t)` up to scale.
//!
//! A mirror camera is the observer frame turned half a revolution about its x
//! axis and moved `D` along the principal ray, with the image y axis flipped:
//!
//! ```text
//! P_m = K_m [ M · pose ],   M = [R_x(π) | (0, 0, D)],   K_m = diag(1, -1, 1) K_o
//! ```
//!
//! `M` acts in the observer's own frame, so the mirror center sits on the
//! observer's principal ray at distance `D` and looks back toward the observer.

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{half_turn_x, RigidTransform, Rotation};
use crate::mesh::SceneMesh;
use crate::triangulate::Ray;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("mirror distance must be positive, got {0} mm")]
    NonPositiveDistance(f64),
    #[error("point projects through the optical center")]
    AtOpticalCenter,
    #[error("gaze ray does not hit the scene mesh")]
    NoHit,
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
}

/// Upper-triangular intrinsic matrix `[[fx, skew, cx], [0, fy, cy], [0, 0, 1]]`
/// in pixels. `fy` is negative for mirror cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        Self::with_skew(fx, fy, cx, cy, 0.0)
    }

    pub fn with_skew(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self, CameraError> {
        if ![fx, fy, cx, cy, skew].iter().all(|v| v.is_finite()) {
            return Err(CameraError::NonFinite("intrinsics"));
        }
        if fx <= 0.0 {
            return Err(CameraError::InvalidIntrinsics(format!("fx must be positive, got {fx}")));
        }
        if fy == 0.0 {
            return Err(CameraError::InvalidIntrinsics("fy must be nonzero".into()));
        }
        Ok(Self { fx, fy, cx, cy, skew })
    }

    pub fn identity() -> Self {
        Self { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, skew: 0.0 }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `diag(1, -1, 1) · K`.
    pub fn mirrored(&self) -> Self {
        Self { fy: -self.fy, cy: -self.cy, ..*self }
    }

    /// Normalized camera-frame direction `K⁻¹ (u, v, 1)`.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let y = (pixel.y - self.cy) / self.fy;
        let x = (pixel.x - self.cx - self.skew * y) / self.fx;
        Vector3::new(x, y, 1.0)
    }
}

impl<'de> Deserialize<'de> for CameraIntrinsics {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            fx: f64,
            fy: f64,
            cx: f64,
            cy: f64,
            #[serde(default)]
            skew: f64,
        }
        let r = Raw::deserialize(d)?;
        CameraIntrinsics::with_skew(r.fx, r.fy, r.cx, r.cy, r.skew).map_err(serde::de::Error::custom)
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObserverPose(pub RigidTransform);

impl ObserverPose {
    pub fn identity() -> Self {
        Self(RigidTransform::identity())
    }

    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear toward the top of the image.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(up);
        if x.norm() < 1e-9 {
            let fallback = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            x = z.cross(&fallback);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = Rotation::from_matrix_lenient(r).expect("orthonormal basis");
        let translation = -(rotation.rotate(eye));
        Self(RigidTransform::new(rotation, translation))
    }

    pub fn transform(&self) -> &RigidTransform {
        &self.0
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        self.0.inverse().translation
    }

    /// Principal-ray direction (+z of the camera) in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.0.rotation.inverse().rotate(&Vector3::z())
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_point(world)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRole {
    Observer,
    Mirror,
}

/// 3x4 pixel projection matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix {
    matrix: Matrix3x4<f64>,
    pub role: ProjectionRole,
}

impl ProjectionMatrix {
    /// Rejects matrices whose left 3x3 block is singular.
    pub fn new(matrix: Matrix3x4<f64>, role: ProjectionRole) -> Result<Self, CameraError> {
        let left = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(CameraError::NonFinite("projection matrix"));
        }
        if left.determinant().abs() < 1e-12 * left.norm().powi(3).max(f64::MIN_POSITIVE) {
            return Err(CameraError::InvalidIntrinsics("projection has rank < 3".into()));
        }
        Ok(Self { matrix, role })
    }

    fn from_parts(k: &CameraIntrinsics, extrinsic: &RigidTransform, role: ProjectionRole) -> Self {
        let rt = extrinsic.to_homogeneous().fixed_view::<3, 4>(0, 0).into_owned();
        Self { matrix: k.matrix() * rt, role }
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.matrix
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { matrix: self.matrix * factor, role: self.role }
    }

    /// Right null vector of the projection, dehomogenized.
    pub fn camera_center(&self) -> Vector3<f64> {
        let left = self.matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let last = self.matrix.column(3).into_owned();
        left.lu().solve(&(-last)).expect("rank-3 projection")
    }

    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let m = &self.matrix;
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }
}

impl Serialize for ProjectionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out {
            role: ProjectionRole,
            rows: [[f64; 4]; 3],
        }
        Out { role: self.role, rows: self.to_rows() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProjectionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct In {
            role: ProjectionRole,
            rows: [[f64; 4]; 3],
        }
        let i = In::deserialize(d)?;
        let m = Matrix3x4::from_fn(|r, c| i.rows[r][c]);
        ProjectionMatrix::new(m, i.role).map_err(serde::de::Error::custom)
    }
}

/// Pixel position and signed depth (third homogeneous coordinate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

impl Projection {
    pub fn is_behind_camera(&self) -> bool {
        self.depth < 0.0
    }
}

pub fn observer_projection(k: &CameraIntrinsics, pose: &ObserverPose) -> ProjectionMatrix {
    ProjectionMatrix::from_parts(k, &pose.0, ProjectionRole::Observer)
}

/// `[R_x(π) | (0, 0, D)]`, expressed in the observer frame.
pub fn mirror_offset(distance_mm: f64) -> RigidTransform {
    RigidTransform::new(half_turn_x(), Vector3::new(0.0, 0.0, distance_mm))
}

/// Reversed frustum frozen from an observer pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorCamera {
    pub observer: ObserverPose,
    pub observer_intrinsics: CameraIntrinsics,
    pub distance_mm: f64,
    /// `K_m`.
    pub intrinsics: CameraIntrinsics,
    /// World-to-mirror-camera transform.
    pub pose: ObserverPose,
}

impl MirrorCamera {
    pub fn new(k_o: &CameraIntrinsics, observer: &ObserverPose, distance_mm: f64) -> Result<Self, CameraError> {
        if !distance_mm.is_finite() {
            return Err(CameraError::NonFinite("mirror distance"));
        }
        if distance_mm <= 0.0 {
            return Err(CameraError::NonPositiveDistance(distance_mm));
        }
        Ok(Self {
            observer: *observer,
            observer_intrinsics: *k_o,
            distance_mm,
            intrinsics: k_o.mirrored(),
            pose: ObserverPose(mirror_offset(distance_mm) * observer.0),
        })
    }

    pub fn projection(&self) -> ProjectionMatrix {
        ProjectionMatrix::from_parts(&self.intrinsics, &self.pose.0, ProjectionRole::Mirror)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.center()
    }

    pub fn pixel_to_ray(&self, pixel: &Vector2<f64>) -> Ray {
        pixel_to_ray(&self.intrinsics, &self.pose, pixel)
    }
}

pub fn mirror_projection(
    k_o: &CameraIntrinsics,
    pose: &ObserverPose,
    distance_mm: f64,
) -> Result<ProjectionMatrix, CameraError> {
    Ok(MirrorCamera::new(k_o, pose, distance_mm)?.projection())
}

pub fn project(p: &ProjectionMatrix, x: &Vector3<f64>) -> Result<Projection, CameraError> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(CameraError::NonFinite("point"));
    }
    let h = p.matrix * x.push(1.0);
    if h.z.abs() < 1e-12 {
        return Err(CameraError::AtOpticalCenter);
    }
    Ok(Projection { pixel: Vector2::new(h.x / h.z, h.y / h.z), depth: h.z })
}

/// Ray from the camera center through `pixel`, in world coordinates.
pub fn pixel_to_ray(k: &CameraIntrinsics, pose: &ObserverPose, pixel: &Vector2<f64>) -> Ray {
    let direction_cam = k.unproject(pixel);
    let direction = pose.0.rotation.inverse().rotate(&direction_cam);
    Ray::new(pose.center(), direction).expect("unprojected direction has unit z component")
}

/// Distance along `gaze` to the nearest surface of `mesh`.
pub fn gaze_distance(gaze: &Ray, mesh: &SceneMesh) -> Result<f64, CameraError> {
    mesh.nearest_hit(gaze).map(|hit| hit.distance).ok_or(CameraError::NoHit)
}
