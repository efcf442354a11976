//! Gaze rays, least-squares ray intersection and landmark-pair metrics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::RigidTransform;
use crate::stats;

/// Rays whose normal matrix is worse conditioned than this are rejected.
pub const MAX_CONDITION_NUMBER: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriangulationError {
    #[error("need at least two rays, got {0}")]
    TooFewRays(usize),
    #[error("rays are (nearly) parallel: condition number {condition:e}")]
    DegenerateRays { condition: f64 },
    #[error("ray direction must be a finite nonzero vector")]
    InvalidDirection,
    #[error("landmark lists differ in length ({real} real, {virtual_} virtual)")]
    LengthMismatch { real: usize, virtual_: usize },
    #[error("need at least one landmark pair")]
    Empty,
    #[error("landmark index {index} out of range for {len} landmarks")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Half-line from `origin` along a unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ray {
    origin: Vector3<f64>,
    direction: Vector3<f64>,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self, TriangulationError> {
        let n = direction.norm();
        if !n.is_finite() || n < 1e-12 || !origin.iter().all(|v| v.is_finite()) {
            return Err(TriangulationError::InvalidDirection);
        }
        Ok(Self { origin, direction: direction / n })
    }

    pub fn origin(&self) -> &Vector3<f64> {
        &self.origin
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }

    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        self.origin + self.direction * s
    }

    /// `I - u uᵀ`.
    pub fn perpendicular_projector(&self) -> Matrix3<f64> {
        Matrix3::identity() - self.direction * self.direction.transpose()
    }

    /// Distance from `x` to the supporting line.
    pub fn distance_to(&self, x: &Vector3<f64>) -> f64 {
        (self.perpendicular_projector() * (x - self.origin)).norm()
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self { origin: t.transform_point(&self.origin), direction: t.transform_vector(&self.direction) }
    }
}

impl<'de> Deserialize<'de> for Ray {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            origin: Vector3<f64>,
            direction: Vector3<f64>,
        }
        let r = Raw::deserialize(d)?;
        Ray::new(r.origin, r.direction).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkSource {
    Real,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    #[serde(rename = "position_mm")]
    pub position: Vector3<f64>,
    pub source: LandmarkSource,
    #[serde(default)]
    pub label: String,
}

impl Landmark {
    pub fn new(position: Vector3<f64>, source: LandmarkSource, label: impl Into<String>) -> Self {
        Self { position, source, label: label.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayIntersection {
    pub point: Vector3<f64>,
    /// Sum of squared perpendicular distances, mm².
    pub residual: f64,
    pub condition: f64,
}

impl RayIntersection {
    pub fn into_landmark(self, source: LandmarkSource, label: impl Into<String>) -> Landmark {
        Landmark::new(self.point, source, label)
    }
}

/// Least-squares point closest to all rays (treated as lines):
/// `(Σ (I - uuᵀ)) x = Σ (I - uuᵀ) h`, solved through the eigen-decomposition
/// of the symmetric normal matrix.
pub fn intersect_rays(rays: &[Ray]) -> Result<RayIntersection, TriangulationError> {
    if rays.len() < 2 {
        return Err(TriangulationError::TooFewRays(rays.len()));
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for ray in rays {
        let p = ray.perpendicular_projector();
        a += p;
        b += p * ray.origin;
    }
    let eig = a.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > MAX_CONDITION_NUMBER {
        return Err(TriangulationError::DegenerateRays { condition });
    }
    let v = &eig.eigenvectors;
    let coeffs = (v.transpose() * b).component_div(&eig.eigenvalues);
    let point = v * coeffs;
    let residual = rays.iter().map(|r| r.distance_to(&point).powi(2)).sum();
    Ok(RayIntersection { point, residual, condition })
}

/// How per-axis differences enter the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisErrorMode {
    /// `|virtual - real|` per axis before averaging.
    #[default]
    Absolute,
    Signed,
}

/// Per-axis mean / standard deviation of landmark misalignment plus the
/// norms of the mean and std vectors (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentReport {
    pub axis_error: AxisErrorMode,
    pub pairs: usize,
    pub mean_mm: [f64; 3],
    /// Population standard deviation.
    pub std_mm: [f64; 3],
    pub mean_norm_mm: f64,
    pub std_norm_mm: f64,
}

impl MisalignmentReport {
    pub fn from_differences(diffs: &[Vector3<f64>], mode: AxisErrorMode) -> Result<Self, TriangulationError> {
        if diffs.is_empty() {
            return Err(TriangulationError::Empty);
        }
        let mut mean_mm = [0.0; 3];
        let mut std_mm = [0.0; 3];
        for axis in 0..3 {
            let values: Vec<f64> = diffs
                .iter()
                .map(|d| match mode {
                    AxisErrorMode::Absolute => d[axis].abs(),
                    AxisErrorMode::Signed => d[axis],
                })
                .collect();
            mean_mm[axis] = stats::mean(&values);
            std_mm[axis] = stats::population_std(&values);
        }
        Ok(Self {
            axis_error: mode,
            pairs: diffs.len(),
            mean_mm,
            std_mm,
            mean_norm_mm: Vector3::from(mean_mm).norm(),
            std_norm_mm: Vector3::from(std_mm).norm(),
        })
    }

    pub fn zero(pairs: usize) -> Self {
        Self {
            axis_error: AxisErrorMode::Absolute,
            pairs,
            mean_mm: [0.0; 3],
            std_mm: [0.0; 3],
            mean_norm_mm: 0.0,
            std_norm_mm: 0.0,
        }
    }

    /// `(mean, std)` cells for x, y, z and the L2 column, two-decimal.
    pub fn table_cells(&self) -> [String; 4] {
        let cell = |m: f64, s: f64| format!("({m:.2}, {s:.2})");
        [
            cell(self.mean_mm[0], self.std_mm[0]),
            cell(self.mean_mm[1], self.std_mm[1]),
            cell(self.mean_mm[2], self.std_mm[2]),
            cell(self.mean_norm_mm, self.std_norm_mm),
        ]
    }
}

/// Index-paired misalignment between real and virtual landmarks using
/// absolute per-axis differences.
pub fn pair_misalignment(real: &[Landmark], virtual_: &[Landmark]) -> Result<MisalignmentReport, TriangulationError> {
    pair_misalignment_with(real, virtual_, AxisErrorMode::Absolute)
}

pub fn pair_misalignment_with(
    real: &[Landmark],
    virtual_: &[Landmark],
    mode: AxisErrorMode,
) -> Result<MisalignmentReport, TriangulationError> {
    if real.len() != virtual_.len() {
        return Err(TriangulationError::LengthMismatch { real: real.len(), virtual_: virtual_.len() });
    }
    let diffs: Vec<Vector3<f64>> = real.iter().zip(virtual_).map(|(r, v)| v.position - r.position).collect();
    MisalignmentReport::from_differences(&diffs, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCheck {
    pub errors_mm: Vec<f64>,
    pub mean_error_mm: f64,
}

/// `|‖x_a - x_b‖ - expected|` for each index pair, and the mean.
pub fn distance_check(
    landmarks: &[Landmark],
    pairs: &[(usize, usize)],
    expected_mm: &[f64],
) -> Result<DistanceCheck, TriangulationError> {
    if pairs.len() != expected_mm.len() {
        return Err(TriangulationError::LengthMismatch { real: pairs.len(), virtual_: expected_mm.len() });
    }
    if pairs.is_empty() {
        return Err(TriangulationError::Empty);
    }
    let len = landmarks.len();
    let errors_mm = pairs
        .iter()
        .zip(expected_mm)
        .map(|(&(a, b), expected)| {
            let bad = [a, b].into_iter().find(|&i| i >= len);
            match bad {
                Some(index) => Err(TriangulationError::IndexOutOfRange { index, len }),
                None => Ok(((landmarks[a].position - landmarks[b].position).norm() - expected).abs()),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean_error_mm = stats::mean(&errors_mm);
    Ok(DistanceCheck { errors_mm, mean_error_mm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Rotation;
    use proptest::prelude::*;

    fn ray(h: [f64; 3], u: [f64; 3]) -> Ray {
        Ray::new(Vector3::from(h), Vector3::from(u)).unwrap()
    }

    fn lm(p: [f64; 3], source: LandmarkSource) -> Landmark {
        Landmark::new(Vector3::from(p), source, "")
    }

    #[test]
    fn exact_crossing() {
        let r = intersect_rays(&[ray([0.0, 0.0, 0.0], [1.0, 1.0, 0.0]), ray([2.0, 0.0, 0.0], [-1.0, 1.0, 0.0])]).unwrap();
        assert!((r.point - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        assert!(r.residual < 1e-9);
    }

    #[test]
    fn skew_rays_give_midpoint_of_common_perpendicular() {
        let r = intersect_rays(&[ray([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]), ray([1.0, -5.0, 0.0], [0.0, 1.0, 0.0])]).unwrap();
        assert!((r.point - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        assert!((r.residual - 0.5).abs() < 1e-12);
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        let err = intersect_rays(&[ray([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]), ray([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])]);
        assert!(matches!(err, Err(TriangulationError::DegenerateRays { .. })));
        assert_eq!(intersect_rays(&[ray([0.0; 3], [1.0, 0.0, 0.0])]), Err(TriangulationError::TooFewRays(1)));
        assert!(Ray::new(Vector3::zeros(), Vector3::zeros()).is_err());
    }

    #[test]
    fn misalignment_identical_lists_is_zero() {
        let real = vec![lm([1.0, 2.0, 3.0], LandmarkSource::Real), lm([-4.0, 0.5, 9.0], LandmarkSource::Real)];
        let virt: Vec<_> = real.iter().map(|l| Landmark { source: LandmarkSource::Virtual, ..l.clone() }).collect();
        let r = pair_misalignment(&real, &virt).unwrap();
        assert_eq!(r.mean_mm, [0.0; 3]);
        assert_eq!(r.std_mm, [0.0; 3]);
        assert_eq!(r.mean_norm_mm, 0.0);
    }

    #[test]
    fn misalignment_constant_offset() {
        let offset = Vector3::new(9.0, 10.3, 9.18);
        let real = vec![
            lm([0.0, 0.0, 0.0], LandmarkSource::Real),
            lm([100.0, -20.0, 5.0], LandmarkSource::Real),
            lm([-30.0, 60.0, 250.0], LandmarkSource::Real),
        ];
        let virt: Vec<_> = real.iter().map(|l| Landmark::new(l.position + offset, LandmarkSource::Virtual, "")).collect();
        let r = pair_misalignment(&real, &virt).unwrap();
        for axis in 0..3 {
            assert!((r.mean_mm[axis] - offset[axis]).abs() < 1e-12);
            assert!(r.std_mm[axis] < 1e-12);
        }
        assert!((r.mean_norm_mm - 16.4729).abs() < 1e-3);
        assert_eq!(r.table_cells()[3], "(16.47, 0.00)");
    }

    #[test]
    fn misalignment_three_pairs_spreadsheet() {
        // Differences (virtual - real): (1, -2, 3), (-3, 4, 1), (2, 0, -5).
        let real = vec![
            lm([0.0, 0.0, 0.0], LandmarkSource::Real),
            lm([10.0, 10.0, 10.0], LandmarkSource::Real),
            lm([-5.0, 2.0, 7.0], LandmarkSource::Real),
        ];
        let virt = vec![
            lm([1.0, -2.0, 3.0], LandmarkSource::Virtual),
            lm([7.0, 14.0, 11.0], LandmarkSource::Virtual),
            lm([-3.0, 2.0, 2.0], LandmarkSource::Virtual),
        ];
        let r = pair_misalignment(&real, &virt).unwrap();
        // |dx| = 1,3,2 -> mean 2, pop. var 2/3; |dy| = 2,4,0 -> mean 2, var 8/3;
        // |dz| = 3,1,5 -> mean 3, var 8/3.
        let expected_mean = [2.0, 2.0, 3.0];
        let expected_std = [(2.0f64 / 3.0).sqrt(), (8.0f64 / 3.0).sqrt(), (8.0f64 / 3.0).sqrt()];
        for a in 0..3 {
            assert!((r.mean_mm[a] - expected_mean[a]).abs() < 1e-9);
            assert!((r.std_mm[a] - expected_std[a]).abs() < 1e-9);
        }
        assert!((r.mean_norm_mm - 17f64.sqrt()).abs() < 1e-9);
        assert!((r.std_norm_mm - 6f64.sqrt()).abs() < 1e-9);

        let signed = pair_misalignment_with(&real, &virt, AxisErrorMode::Signed).unwrap();
        assert!((signed.mean_mm[0] - 0.0).abs() < 1e-12);
        assert!((signed.mean_mm[2] - (-1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn misalignment_length_mismatch() {
        let real = vec![lm([0.0; 3], LandmarkSource::Real)];
        assert!(matches!(pair_misalignment(&real, &[]), Err(TriangulationError::LengthMismatch { .. })));
        assert_eq!(pair_misalignment(&[], &[]), Err(TriangulationError::Empty));
    }

    #[test]
    fn distance_check_examples() {
        let pts = vec![
            lm([0.0, 0.0, 0.0], LandmarkSource::Real),
            lm([100.0, 0.0, 0.0], LandmarkSource::Real),
            lm([103.6, 0.0, 0.0], LandmarkSource::Real),
            lm([30.0, 40.0, 0.0], LandmarkSource::Real),
        ];
        let r = distance_check(&pts, &[(0, 1)], &[100.0]).unwrap();
        assert_eq!(r.errors_mm, vec![0.0]);
        let r = distance_check(&pts, &[(0, 2)], &[100.0]).unwrap();
        assert!((r.errors_mm[0] - 3.6).abs() < 1e-9);
        // Hand norms: |p3 - p0| = 50, |p3 - p1| = sqrt(70² + 40²).
        let r = distance_check(&pts, &[(3, 0), (1, 3)], &[52.0, 80.0]).unwrap();
        let e1 = (4900f64 + 1600.0).sqrt() - 80.0;
        assert!((r.errors_mm[0] - 2.0).abs() < 1e-12);
        assert!((r.errors_mm[1] - e1.abs()).abs() < 1e-12);
        assert!((r.mean_error_mm - (2.0 + e1.abs()) / 2.0).abs() < 1e-12);
        assert_eq!(
            distance_check(&pts, &[(0, 9)], &[1.0]),
            Err(TriangulationError::IndexOutOfRange { index: 9, len: 4 })
        );
    }

    fn unit() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter_map("nonzero", |(x, y, z)| {
                let v = Vector3::new(x, y, z);
                (v.norm() > 0.2).then(|| v.normalize())
            })
    }

    fn spread_rays() -> impl Strategy<Value = (Vector3<f64>, Vec<Ray>)> {
        let target = (-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0).prop_map(|(x, y, z)| Vector3::new(x, y, z));
        (target, proptest::collection::vec((unit(), 200.0f64..800.0, unit()), 2..5)).prop_filter_map(
            "well conditioned",
            |(target, parts)| {
                let rays: Vec<Ray> = parts
                    .iter()
                    .map(|(dir, dist, jitter)| {
                        let origin = target + dir * *dist;
                        let aim = target + jitter * 5.0;
                        Ray::new(origin, aim - origin).unwrap()
                    })
                    .collect();
                intersect_rays(&rays).ok().filter(|r| r.condition < 1e4).map(|_| (target, rays))
            },
        )
    }

    proptest! {
        #[test]
        fn invariant_under_rigid_motion(
            (_, rays) in spread_rays(),
            w in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            t in (-500.0f64..500.0, -500.0f64..500.0, -500.0f64..500.0),
        ) {
            let motion = RigidTransform::new(
                Rotation::from_axis_angle(&Vector3::new(w.0, w.1, w.2), Vector3::new(w.0, w.1, w.2).norm()),
                Vector3::new(t.0, t.1, t.2),
            );
            let x = intersect_rays(&rays).unwrap().point;
            let moved: Vec<Ray> = rays.iter().map(|r| r.transformed(&motion)).collect();
            let y = intersect_rays(&moved).unwrap().point;
            prop_assert!((motion.transform_point(&x) - y).norm() < 1e-9);
        }

        #[test]
        fn invariant_under_sliding_origins((_, rays) in spread_rays(), s in -300.0f64..300.0) {
            let x = intersect_rays(&rays).unwrap().point;
            let slid: Vec<Ray> = rays.iter().map(|r| Ray::new(r.point_at(s), *r.direction()).unwrap()).collect();
            let y = intersect_rays(&slid).unwrap().point;
            prop_assert!((x - y).norm() < 1e-9);
        }

        #[test]
        fn exactly_intersecting_rays_recover_the_point(target in (-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0),
                                                       dirs in proptest::collection::vec(unit(), 2..5)) {
            let target = Vector3::new(target.0, target.1, target.2);
            let rays: Vec<Ray> = dirs.iter().map(|d| Ray::new(target + d * 400.0, -d).unwrap()).collect();
            if let Ok(r) = intersect_rays(&rays) {
                prop_assume!(r.condition < 1e4);
                prop_assert!((r.point - target).norm() < 1e-9);
                prop_assert!(r.residual < 1e-9);
            }
        }

        #[test]
        fn l2_columns_are_vector_norms(diffs in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 1..10)) {
            let diffs: Vec<Vector3<f64>> = diffs.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect();
            let r = MisalignmentReport::from_differences(&diffs, AxisErrorMode::Absolute).unwrap();
            prop_assert!((r.mean_norm_mm - Vector3::from(r.mean_mm).norm()).abs() < 1e-9);
            prop_assert!((r.std_norm_mm - Vector3::from(r.std_mm).norm()).abs() < 1e-9);
            prop_assert!(r.std_mm.iter().all(|s| *s >= 0.0));
        }
    }
}
