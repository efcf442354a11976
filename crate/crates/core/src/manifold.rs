//! Rotations and rigid transforms on SO(3) / SE(3).
//!
//! Rotations are stored as 3x3 matrices. The tangent space is the usual
//! axis-angle vector `w` with `R = exp(ŵ)`. Repeated registrations are fused
//! with a Karcher (geodesic) mean for the rotation part and an arithmetic mean
//! for the translation part; the two are averaged independently.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Orthonormality tolerance for values that are kept bit-for-bit.
const STRICT_TOLERANCE: f64 = 1e-9;
/// Inputs further than this from SO(3) are rejected instead of re-projected.
const LOOSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("empty input")]
    EmptyInput,
    #[error("rotation {index} is {angle:.4} rad from the first input; the mean is only defined within pi/2")]
    DispersedInput { index: usize, angle: f64 },
    #[error("Karcher iteration did not converge in {iterations} steps (gradient norm {gradient_norm:e})")]
    NonConvergent { iterations: usize, gradient_norm: f64 },
    #[error("matrix is not a rotation (|RᵀR - I| = {orthogonality:e}, det = {determinant})")]
    NotARotation { orthogonality: f64, determinant: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Skew-symmetric matrix `ŵ` such that `ŵ v = w × v`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] applied to the skew part `(m - mᵀ)`, i.e. twice the
/// axial vector of `m`'s antisymmetric part.
fn vee_antisymmetric(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Axis-angle vector in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TangentVector(pub Vector3<f64>);

impl TangentVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn hat(&self) -> Matrix3<f64> {
        hat(&self.0)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Element of SO(3).
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.log();
        write!(f, "Rotation(axis-angle [{:.6}, {:.6}, {:.6}])", w.0.x, w.0.y, w.0.z)
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Accepts `m` if it is orthonormal with positive determinant within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, ManifoldError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(ManifoldError::NonFinite("rotation matrix"));
        }
        let (orthogonality, determinant) = rotation_defect(&m);
        if orthogonality > STRICT_TOLERANCE || (determinant - 1.0).abs() > STRICT_TOLERANCE {
            return Err(ManifoldError::NotARotation { orthogonality, determinant });
        }
        Ok(Self(m))
    }

    /// Like [`Rotation::from_matrix`], but re-projects matrices that are
    /// within 1e-6 of SO(3) (e.g. hand-written with rounded entries).
    pub fn from_matrix_lenient(m: Matrix3<f64>) -> Result<Self, ManifoldError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(ManifoldError::NonFinite("rotation matrix"));
        }
        let (orthogonality, determinant) = rotation_defect(&m);
        if orthogonality <= STRICT_TOLERANCE && (determinant - 1.0).abs() <= STRICT_TOLERANCE {
            return Ok(Self(m));
        }
        if orthogonality <= LOOSE_TOLERANCE && (determinant - 1.0).abs() <= LOOSE_TOLERANCE {
            return Ok(nearest_rotation(&m));
        }
        Err(ManifoldError::NotARotation { orthogonality, determinant })
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    /// A zero axis gives the identity.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        so3_exp(&TangentVector(axis * (angle / n)))
    }

    pub fn about_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn about_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn about_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Quaternion in `[w, x, y, z]` order; normalized before conversion.
    pub fn from_quaternion_wxyz(q: [f64; 4]) -> Result<Self, ManifoldError> {
        if !q.iter().all(|v| v.is_finite()) {
            return Err(ManifoldError::NonFinite("quaternion"));
        }
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() < 1e-12 {
            return Err(ManifoldError::NotARotation { orthogonality: 1.0, determinant: 0.0 });
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Ok(Self(*unit.to_rotation_matrix().matrix()))
    }

    pub fn to_quaternion_wxyz(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn log(&self) -> TangentVector {
        so3_log(self)
    }

    pub fn exp(w: &TangentVector) -> Self {
        so3_exp(w)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        self.log().angle()
    }

    /// Row-major entries.
    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, ManifoldError> {
        Self::from_matrix_lenient(rows_to_matrix(rows))
    }
}

fn rows_to_matrix(rows: [[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
        rows[2][1], rows[2][2],
    )
}

fn rotation_defect(m: &Matrix3<f64>) -> (f64, f64) {
    let orthogonality = (m.transpose() * m - Matrix3::identity()).abs().max();
    (orthogonality, m.determinant())
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Rotation::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Orthogonal projection of an arbitrary 3x3 matrix onto SO(3) (polar
/// decomposition with a determinant fix).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    let mut u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    if (u * v_t).determinant() < 0.0 {
        let k = svd.singular_values.imin();
        u.column_mut(k).neg_mut();
    }
    Rotation(u * v_t)
}

/// Rodrigues' formula.
pub fn so3_exp(w: &TangentVector) -> Rotation {
    let theta_sq = w.0.norm_squared();
    let theta = theta_sq.sqrt();
    let (a, b) = if theta < 1e-4 {
        // Taylor expansions of sin θ / θ and (1 - cos θ) / θ²
        (1.0 - theta_sq / 6.0 + theta_sq * theta_sq / 120.0, 0.5 - theta_sq / 24.0 + theta_sq * theta_sq / 720.0)
    } else {
        let half = (0.5 * theta).sin() / theta;
        (theta.sin() / theta, 2.0 * half * half)
    };
    let k = w.hat();
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Canonical logarithm with angle in `[0, π]`.
///
/// At angle π the axis is only defined up to sign; it is taken from the
/// symmetric part of `R` (whose dominant eigenvector is the axis) and
/// canonicalized so that its first nonzero component is positive.
pub fn so3_log(r: &Rotation) -> TangentVector {
    let m = &r.0;
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let v = vee_antisymmetric(m); // 2 sin θ · axis
    let sin = 0.5 * v.norm();
    let theta = sin.atan2(cos);

    if theta < 1e-6 {
        // θ / (2 sin θ) ≈ (1 + θ²/6) / 2
        return TangentVector(v * (0.5 * (1.0 + theta * theta / 6.0)));
    }
    if cos > -0.9 {
        return TangentVector(v * (0.5 * theta / sin));
    }

    // Near π: a aᵀ = (S - cos θ I) / (1 - cos θ) with S the symmetric part.
    let sym = (m + m.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * cos) / (1.0 - cos);
    let k = outer.diagonal().imax();
    let mut axis: Vector3<f64> = outer.column(k).into_owned() / outer[(k, k)].max(0.0).sqrt();
    axis.normalize_mut();
    if sin > 1e-10 {
        if axis.dot(&v) < 0.0 {
            axis = -axis;
        }
    } else {
        canonicalize_sign(&mut axis);
    }
    TangentVector(axis * theta)
}

fn canonicalize_sign(axis: &mut Vector3<f64>) {
    if let Some(first) = axis.iter().copied().find(|c| c.abs() > 1e-12) {
        if first < 0.0 {
            axis.neg_mut();
        }
    }
}

/// Riemannian distance: the angle of `Raᵀ Rb`, in radians.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    so3_log(&(a.inverse() * *b)).angle()
}

/// Stopping rule for the Karcher iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KarcherOptions {
    /// Bound on `‖Σ log(R̄ᵀ Rᵢ)‖`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for KarcherOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 100 }
    }
}

/// Chordal (Frobenius) mean: the arithmetic matrix mean projected onto SO(3).
pub fn chordal_mean(rotations: &[Rotation]) -> Result<Rotation, ManifoldError> {
    if rotations.is_empty() {
        return Err(ManifoldError::EmptyInput);
    }
    let sum = rotations.iter().fold(Matrix3::zeros(), |acc, r| acc + r.0);
    Ok(nearest_rotation(&(sum / rotations.len() as f64)))
}

/// Sum of the tangent vectors `log(R̄ᵀ Rᵢ)`; zero at a Karcher mean.
pub fn karcher_gradient(mean: &Rotation, rotations: &[Rotation]) -> Vector3<f64> {
    let inv = mean.inverse();
    rotations.iter().fold(Vector3::zeros(), |acc, r| acc + so3_log(&(inv * *r)).0)
}

pub fn rotation_mean(rotations: &[Rotation]) -> Result<Rotation, ManifoldError> {
    rotation_mean_with(rotations, KarcherOptions::default())
}

/// Karcher mean, i.e. the minimizer of `Σ d(Rᵢ, R)²`, by fixed-point
/// iteration `R ← R·exp(mean log(Rᵀ Rᵢ))` started from the chordal mean.
pub fn rotation_mean_with(
    rotations: &[Rotation],
    options: KarcherOptions,
) -> Result<Rotation, ManifoldError> {
    let first = rotations.first().ok_or(ManifoldError::EmptyInput)?;
    if rotations.iter().all(|r| r == first) {
        return Ok(*first);
    }
    for (index, r) in rotations.iter().enumerate() {
        let angle = geodesic_distance(first, r);
        if angle >= FRAC_PI_2 {
            return Err(ManifoldError::DispersedInput { index, angle });
        }
    }

    let n = rotations.len() as f64;
    let mut mean = chordal_mean(rotations)?;
    let mut gradient = karcher_gradient(&mean, rotations);
    for _ in 0..options.max_iterations {
        if gradient.norm() < options.tolerance {
            return Ok(mean);
        }
        mean = mean * so3_exp(&TangentVector(gradient / n));
        gradient = karcher_gradient(&mean, rotations);
    }
    if gradient.norm() < options.tolerance {
        return Ok(mean);
    }
    Err(ManifoldError::NonConvergent {
        iterations: options.max_iterations,
        gradient_norm: gradient.norm(),
    })
}

/// Arithmetic mean, accumulated relative to the first element so that sets of
/// identical vectors average to that vector exactly.
pub fn translation_mean(translations: &[Vector3<f64>]) -> Result<Vector3<f64>, ManifoldError> {
    let first = translations.first().ok_or(ManifoldError::EmptyInput)?;
    let offset = translations.iter().fold(Vector3::zeros(), |acc, t| acc + (t - first));
    Ok(first + offset / translations.len() as f64)
}

/// Rigid-body transform `x ↦ R x + t`; translations in millimeters.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation,
    #[serde(rename = "translation_mm")]
    pub translation: Vector3<f64>,
}

impl fmt::Debug for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        write!(f, "RigidTransform({:?}, t [{:.6}, {:.6}, {:.6}])", self.rotation, t.x, t.y, t.z)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), translation)
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self::new(r_inv, -(r_inv.rotate(&self.translation)))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(v)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Geodesic rotation angle (rad) and translation distance (mm) to `other`.
    pub fn deviation(&self, other: &RigidTransform) -> (f64, f64) {
        (
            geodesic_distance(&self.rotation, &other.rotation),
            (self.translation - other.translation).norm(),
        )
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        &self * &rhs
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * rhs.rotation,
            self.rotation.rotate(&rhs.translation) + self.translation,
        )
    }
}

/// `T̄ = (R̄, t̄)`: Karcher mean of the rotations paired with the arithmetic
/// mean of the translations.
pub fn transform_mean(transforms: &[RigidTransform]) -> Result<RigidTransform, ManifoldError> {
    transform_mean_with(transforms, KarcherOptions::default())
}

pub fn transform_mean_with(
    transforms: &[RigidTransform],
    options: KarcherOptions,
) -> Result<RigidTransform, ManifoldError> {
    if transforms.len() == 1 {
        return Ok(transforms[0]);
    }
    let rotations: Vec<Rotation> = transforms.iter().map(|t| t.rotation).collect();
    let translations: Vec<Vector3<f64>> = transforms.iter().map(|t| t.translation).collect();
    Ok(RigidTransform::new(
        rotation_mean_with(&rotations, options)?,
        translation_mean(&translations)?,
    ))
}

/// Half-turn about x, used by the mirror construction.
pub fn half_turn_x() -> Rotation {
    Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn series_exp(w: &Vector3<f64>) -> Matrix3<f64> {
        let k = hat(w);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for i in 1..30 {
            term = term * k / i as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(so3_exp(&TangentVector::zero()), Rotation::identity());
    }

    #[test]
    fn quarter_turn_about_x_maps_y_to_z() {
        let r = so3_exp(&TangentVector::new(FRAC_PI_2, 0.0, 0.0));
        let mapped = r.rotate(&Vector3::y());
        assert_abs_diff_eq!(mapped, Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn exp_matches_power_series() {
        let w = Vector3::new(0.1, 0.2, 0.3);
        let diff = (so3_exp(&TangentVector(w)).matrix() - series_exp(&w)).abs().max();
        assert!(diff < 1e-10, "diff {diff}");
    }

    #[test]
    fn exp_matches_power_series_small_angle_branch() {
        let w = Vector3::new(2e-5, -3e-5, 1e-5);
        let diff = (so3_exp(&TangentVector(w)).matrix() - series_exp(&w)).abs().max();
        assert!(diff < 1e-15, "diff {diff}");
    }

    #[test]
    fn log_of_identity_and_quarter_turn() {
        assert_eq!(so3_log(&Rotation::identity()), TangentVector::zero());
        let w = so3_log(&Rotation::about_x(FRAC_PI_2));
        assert_abs_diff_eq!(w.0, Vector3::new(FRAC_PI_2, 0.0, 0.0), epsilon = 1e-14);
    }

    /// Axis of a rotation from the eigen-decomposition of its symmetric part
    /// (eigenvalue 1 of R is the largest eigenvalue of (R + Rᵀ)/2).
    fn eigen_axis(r: &Rotation) -> Vector3<f64> {
        let sym = (r.matrix() + r.matrix().transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let k = eig.eigenvalues.imax();
        eig.eigenvectors.column(k).into_owned()
    }

    #[test]
    fn log_near_pi_recovers_axis() {
        let axis = Vector3::new(1.0, 1.0, 1.0).normalize();
        let theta = PI - 1e-4;
        let r = Rotation::from_axis_angle(&axis, theta);
        let w = so3_log(&r);
        let oracle = eigen_axis(&r);
        let recovered = w.0.normalize();
        let err = recovered.cross(&oracle).norm().asin();
        assert!(err < 1e-6, "axis error {err}");
        // Sign must agree with the true axis since θ < π.
        assert!(recovered.dot(&axis) > 0.0);
        assert!((w.angle() - theta).abs() < 1e-9);
    }

    #[test]
    fn log_at_pi_is_canonical() {
        let axis = Vector3::new(-1.0, 2.0, 0.5).normalize();
        let w = so3_log(&Rotation::from_axis_angle(&axis, PI));
        assert!((w.angle() - PI).abs() < 1e-9);
        assert!(w.0.x > 0.0);
        let r_back = so3_exp(&w);
        let r_ref = Rotation::from_axis_angle(&axis, PI);
        assert!((r_back.matrix() - r_ref.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn geodesic_distance_examples() {
        assert_eq!(geodesic_distance(&Rotation::identity(), &Rotation::identity()), 0.0);
        let d = geodesic_distance(&Rotation::identity(), &Rotation::about_z(PI / 3.0));
        assert!((d - PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_mean_examples() {
        let id = Rotation::identity();
        assert_eq!(rotation_mean(&[id, id, id]).unwrap(), id);

        let theta = 40f64.to_radians();
        let m = rotation_mean(&[Rotation::about_z(theta), Rotation::about_z(-theta)]).unwrap();
        assert!(geodesic_distance(&m, &id) < 1e-12);

        let set: Vec<_> = [10.0f64, 20.0, 30.0].iter().map(|d| Rotation::about_z(d.to_radians())).collect();
        let m = rotation_mean(&set).unwrap();
        assert!(geodesic_distance(&m, &Rotation::about_z(20f64.to_radians())) < 1e-12);
    }

    #[test]
    fn rotation_mean_errors() {
        assert_eq!(rotation_mean(&[]), Err(ManifoldError::EmptyInput));
        let far = [Rotation::identity(), Rotation::about_x(100f64.to_radians())];
        assert!(matches!(rotation_mean(&far), Err(ManifoldError::DispersedInput { index: 1, .. })));
        let tight = KarcherOptions { tolerance: 1e-30, max_iterations: 3 };
        let set = [Rotation::about_x(0.3), Rotation::about_y(0.2), Rotation::about_z(0.1)];
        assert!(matches!(
            rotation_mean_with(&set, tight),
            Err(ManifoldError::NonConvergent { iterations: 3, .. })
        ));
    }

    #[test]
    fn translation_mean_examples() {
        assert_eq!(translation_mean(&[Vector3::zeros()]).unwrap(), Vector3::zeros());
        assert_eq!(
            translation_mean(&[Vector3::new(1.0, 0.0, 0.0), Vector3::new(3.0, 0.0, 0.0)]).unwrap(),
            Vector3::new(2.0, 0.0, 0.0)
        );
        assert_eq!(
            translation_mean(&[
                Vector3::new(1.0, 2.0, 3.0),
                Vector3::new(4.0, 5.0, 6.0),
                Vector3::new(7.0, 8.0, 9.0)
            ])
            .unwrap(),
            Vector3::new(4.0, 5.0, 6.0)
        );
        assert_eq!(translation_mean(&[]), Err(ManifoldError::EmptyInput));
    }

    #[test]
    fn transform_mean_examples() {
        let t = RigidTransform::new(Rotation::about_y(0.7), Vector3::new(1.5, -2.25, 3.1));
        assert_eq!(transform_mean(&[t, t, t]).unwrap(), t);
        assert_eq!(transform_mean(&[t, t]).unwrap(), t);
        assert_eq!(transform_mean(&[t]).unwrap(), t);

        let r = Rotation::about_x(0.4);
        let a = RigidTransform::new(r, Vector3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::new(r, Vector3::new(3.0, 0.0, 0.0));
        let m = transform_mean(&[a, b]).unwrap();
        assert_eq!(m.rotation, r);
        assert_eq!(m.translation, Vector3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn group_laws() {
        let t = RigidTransform::new(Rotation::from_axis_angle(&Vector3::new(1.0, -2.0, 0.3), 1.1), Vector3::new(10.0, -4.0, 7.0));
        let id = &t * &t.inverse();
        assert!((id.rotation.matrix() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(id.translation.norm() < 1e-9);
        let p = Vector3::new(0.3, 0.2, -9.0);
        assert_abs_diff_eq!(t.to_homogeneous() * p.push(1.0), t.transform_point(&p).push(1.0), epsilon = 1e-12);
    }

    #[test]
    fn rotation_rejects_non_orthonormal() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::from_matrix(m).is_err());
        let reflection = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Rotation::from_matrix(reflection).is_err());
    }

    #[test]
    fn serde_keeps_matrix_bits() {
        let r = Rotation::from_axis_angle(&Vector3::new(0.2, 0.9, -0.4), 2.2);
        let t = RigidTransform::new(r, Vector3::new(1.0 / 3.0, 2e-7, -5.5));
        let json = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn quaternion_roundtrip() {
        let r = Rotation::from_axis_angle(&Vector3::new(0.2, 0.9, -0.4), 2.2);
        let back = Rotation::from_quaternion_wxyz(r.to_quaternion_wxyz()).unwrap();
        assert!(geodesic_distance(&r, &back) < 1e-12);
    }

    fn tangent_strategy(max_angle: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0..max_angle).prop_filter_map(
            "nonzero axis",
            |(x, y, z, a)| {
                let v = Vector3::new(x, y, z);
                (v.norm() > 1e-3).then(|| v.normalize() * a)
            },
        )
    }

    fn rotation_strategy() -> impl Strategy<Value = Rotation> {
        tangent_strategy(PI).prop_map(|w| so3_exp(&TangentVector(w)))
    }

    proptest! {
        #[test]
        fn exp_log_roundtrip(w in tangent_strategy(PI - 1e-3)) {
            let back = so3_log(&so3_exp(&TangentVector(w)));
            prop_assert!((back.0 - w).norm() < 1e-8);
        }

        #[test]
        fn log_angle_in_range(r in rotation_strategy()) {
            let w = so3_log(&r);
            prop_assert!(w.angle() <= PI + 1e-12);
            let skew = w.hat() + w.hat().transpose();
            prop_assert!(skew.abs().max() == 0.0);
        }

        #[test]
        fn distance_is_bi_invariant(a in rotation_strategy(), b in rotation_strategy(), q in rotation_strategy()) {
            let d = geodesic_distance(&a, &b);
            prop_assert!((geodesic_distance(&(q * a), &(q * b)) - d).abs() < 1e-9);
            prop_assert!((geodesic_distance(&(a * q), &(b * q)) - d).abs() < 1e-9);
            prop_assert!((geodesic_distance(&b, &a) - d).abs() < 1e-12);
        }

        #[test]
        fn distance_matches_trace_formula(a in rotation_strategy(), b in rotation_strategy()) {
            let rel = a.matrix().transpose() * b.matrix();
            let oracle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            // acos is ill-conditioned at ±1, so compare only away from the ends
            prop_assume!(oracle > 1e-3 && oracle < PI - 1e-3);
            prop_assert!((geodesic_distance(&a, &b) - oracle).abs() < 1e-9);
        }

        #[test]
        fn karcher_first_order_condition_and_permutation(
            base in rotation_strategy(),
            offsets in proptest::collection::vec(tangent_strategy(30f64.to_radians()), 2..7),
        ) {
            let set: Vec<Rotation> = offsets.iter().map(|w| base * so3_exp(&TangentVector(*w))).collect();
            let mean = rotation_mean(&set).unwrap();
            prop_assert!(karcher_gradient(&mean, &set).norm() < 1e-10);

            let mut reversed = set.clone();
            reversed.reverse();
            let mean_rev = rotation_mean(&reversed).unwrap();
            prop_assert!(geodesic_distance(&mean, &mean_rev) < 1e-9);

            let ts: Vec<Vector3<f64>> = offsets.iter().map(|w| w * 100.0).collect();
            let mut ts_rev = ts.clone();
            ts_rev.reverse();
            let diff = translation_mean(&ts).unwrap() - translation_mean(&ts_rev).unwrap();
            prop_assert!(diff.norm() < 1e-9);
        }
    }
}
