//! Serial-chain robot description, forward kinematics and joint metrics.
//!
//! Angles are degrees at every public boundary and radians internally.
//!
//! Robot description document (JSON):
//!
//! ```json
//! {
//!   "schema": "realign/robot-description/v1",
//!   "name": "planar-2",
//!   "base_pose": [[1, 0, 0, 0], [0, 0, 0]],
//!   "joints": [
//!     { "fixed_pose": [[1, 0, 0, 0], [0, 0, 0]], "axis": [0, 0, 1],
//!       "limits_deg": [-170, 170], "link_mm": [100, 0, 0] }
//!   ]
//! }
//! ```
//!
//! Poses are `[quaternion wxyz, translation mm]`. Joint `k` contributes
//! `fixed_k ∘ rot(axis_k, q_k) ∘ trans(link_k)` to the chain. An optional
//! `checks` list records hand-derived end-effector poses for fixtures.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{ManifoldError, RigidTransform, Rotation};
use crate::stats::Summary;

pub const ROBOT_SCHEMA: &str = "realign/robot-description/v1";

/// Angle below which an axis counts as parallel to its link.
pub const TWIST_THRESHOLD_DEG: f64 = 45.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobotError {
    #[error("expected {expected} joint values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("joint index {index} out of range for {len} joints")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("joint {0} and every joint after it have zero-length links")]
    ZeroLink(usize),
    #[error("joint {joint}: {message}")]
    InvalidJoint { joint: usize, message: String },
    #[error("robot has no joints")]
    NoJoints,
    #[error("unsupported schema tag {0:?}")]
    Schema(String),
    #[error("joint {joint} angle {angle_deg} deg outside limits [{lo}, {hi}]")]
    OutsideLimits { joint: usize, angle_deg: f64, lo: f64, hi: f64 },
    #[error("invalid pose: {0}")]
    Pose(#[from] ManifoldError),
    #[error("cannot parse robot description: {0}")]
    Parse(String),
    #[error("cannot read robot description: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord(pub [f64; 4], pub [f64; 3]);

impl PoseRecord {
    pub fn to_transform(&self) -> Result<RigidTransform, ManifoldError> {
        Ok(RigidTransform::new(Rotation::from_quaternion_wxyz(self.0)?, Vector3::from(self.1)))
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        Self(t.rotation.to_quaternion_wxyz(), t.translation.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JointRecord {
    fixed_pose: PoseRecord,
    axis: [f64; 3],
    limits_deg: [f64; 2],
    link_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mesh: Option<String>,
}

/// Hand-derived reference pose stored alongside a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkCheck {
    pub q_deg: Vec<f64>,
    pub end_effector_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_effector_rotation_wxyz: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RobotDocument {
    schema: String,
    name: String,
    base_pose: PoseRecord,
    joints: Vec<JointRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    checks: Vec<FkCheck>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    /// Parent link frame to joint frame.
    pub fixed: RigidTransform,
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    pub limits_deg: [f64; 2],
    /// Offset from the joint frame to the child frame, mm.
    pub link: Vector3<f64>,
    /// Display mesh reference, if any.
    pub mesh: Option<String>,
}

impl JointSpec {
    pub fn new(fixed: RigidTransform, axis: Vector3<f64>, limits_deg: [f64; 2], link: Vector3<f64>) -> Self {
        Self { fixed, axis: axis.normalize(), limits_deg, link, mesh: None }
    }

    /// Transform contributed by this joint at `angle_deg`.
    pub fn motion(&self, angle_deg: f64) -> RigidTransform {
        let rot = RigidTransform::from_rotation(Rotation::from_axis_angle(&self.axis, angle_deg.to_radians()));
        &(&self.fixed * &rot) * &RigidTransform::from_translation(self.link)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RobotDocument", into = "RobotDocument")]
pub struct RobotDescription {
    pub name: String,
    pub base: RigidTransform,
    joints: Vec<JointSpec>,
    checks: Vec<FkCheck>,
}

impl TryFrom<RobotDocument> for RobotDescription {
    type Error = RobotError;
    fn try_from(doc: RobotDocument) -> Result<Self, RobotError> {
        if doc.schema != ROBOT_SCHEMA {
            return Err(RobotError::Schema(doc.schema));
        }
        let joints = doc
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let axis = Vector3::from(j.axis);
                let n = axis.norm();
                if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                    return Err(RobotError::InvalidJoint { joint: i, message: format!("axis norm {n} is not 1") });
                }
                let [lo, hi] = j.limits_deg;
                if !(lo < hi) {
                    return Err(RobotError::InvalidJoint { joint: i, message: format!("limits [{lo}, {hi}] not increasing") });
                }
                if !j.link_mm.iter().all(|v| v.is_finite()) {
                    return Err(RobotError::InvalidJoint { joint: i, message: "non-finite link".into() });
                }
                Ok(JointSpec {
                    fixed: j.fixed_pose.to_transform()?,
                    axis: axis / n,
                    limits_deg: j.limits_deg,
                    link: Vector3::from(j.link_mm),
                    mesh: j.mesh.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let robot = RobotDescription::new(doc.name, doc.base_pose.to_transform()?, joints)?;
        for check in &doc.checks {
            robot.check_length(check.q_deg.len())?;
        }
        Ok(Self { checks: doc.checks, ..robot })
    }
}

impl From<RobotDescription> for RobotDocument {
    fn from(r: RobotDescription) -> Self {
        RobotDocument {
            schema: ROBOT_SCHEMA.to_string(),
            name: r.name,
            base_pose: PoseRecord::from_transform(&r.base),
            joints: r
                .joints
                .iter()
                .map(|j| JointRecord {
                    fixed_pose: PoseRecord::from_transform(&j.fixed),
                    axis: j.axis.into(),
                    limits_deg: j.limits_deg,
                    link_mm: j.link.into(),
                    mesh: j.mesh.clone(),
                })
                .collect(),
            checks: r.checks,
        }
    }
}

impl RobotDescription {
    pub fn new(name: impl Into<String>, base: RigidTransform, joints: Vec<JointSpec>) -> Result<Self, RobotError> {
        if joints.is_empty() {
            return Err(RobotError::NoJoints);
        }
        Ok(Self { name: name.into(), base, joints, checks: Vec::new() })
    }

    pub fn from_json(text: &str) -> Result<Self, RobotError> {
        serde_json::from_str(text).map_err(|e| RobotError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RobotError> {
        let text = std::fs::read_to_string(path).map_err(|e| RobotError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("robot description serializes")
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn checks(&self) -> &[FkCheck] {
        &self.checks
    }

    pub fn with_base(&self, base: RigidTransform) -> Self {
        Self { base, ..self.clone() }
    }

    fn check_length(&self, got: usize) -> Result<(), RobotError> {
        if got != self.joints.len() {
            return Err(RobotError::LengthMismatch { expected: self.joints.len(), got });
        }
        Ok(())
    }

    pub fn zero_config(&self) -> JointConfig {
        JointConfig(vec![0.0; self.joints.len()])
    }
}

/// Joint angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn new(degrees: Vec<f64>) -> Self {
        Self(degrees)
    }

    pub fn degrees(&self) -> &[f64] {
        &self.0
    }

    pub fn radians(&self) -> Vec<f64> {
        self.0.iter().map(|d| d.to_radians()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks length and joint limits.
    pub fn check_physical(&self, robot: &RobotDescription) -> Result<(), RobotError> {
        robot.check_length(self.len())?;
        for (joint, (&angle_deg, spec)) in self.0.iter().zip(robot.joints()).enumerate() {
            let [lo, hi] = spec.limits_deg;
            if !(lo..=hi).contains(&angle_deg) {
                return Err(RobotError::OutsideLimits { joint, angle_deg, lo, hi });
            }
        }
        Ok(())
    }
}

/// Pose of each link frame in the world, base to tip.
pub fn forward_kinematics(robot: &RobotDescription, q: &JointConfig) -> Result<Vec<RigidTransform>, RobotError> {
    robot.check_length(q.len())?;
    Ok(chain_poses(&robot.base, &robot.joints, q.degrees()))
}

pub fn end_effector(robot: &RobotDescription, q: &JointConfig) -> Result<RigidTransform, RobotError> {
    Ok(*forward_kinematics(robot, q)?.last().expect("at least one joint"))
}

/// Poses of a partial chain starting from `start`.
pub fn chain_poses(start: &RigidTransform, joints: &[JointSpec], q_deg: &[f64]) -> Vec<RigidTransform> {
    let mut pose = *start;
    joints
        .iter()
        .zip(q_deg)
        .map(|(joint, &angle)| {
            pose = &pose * &joint.motion(angle);
            pose
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointClass {
    /// Axis (nearly) parallel to the link.
    Twisting,
    /// Axis (nearly) orthogonal to the link.
    Revolving,
}

/// Twisting when the axis is within 45° of the link line, else Revolving.
/// A zero link falls back to the displacement to the next nonzero link,
/// expressed in this joint's frame at zero configuration.
pub fn classify_joint(robot: &RobotDescription, index: usize) -> Result<JointClass, RobotError> {
    let joints = robot.joints();
    let joint = joints.get(index).ok_or(RobotError::IndexOutOfRange { index, len: joints.len() })?;
    let mut link = joint.link;
    let mut frame = RigidTransform::identity();
    for next in &joints[index + 1..] {
        if link.norm() > 1e-9 {
            break;
        }
        frame = &frame * &next.fixed;
        link = frame.translation + frame.rotation.rotate(&next.link);
    }
    if link.norm() <= 1e-9 {
        return Err(RobotError::ZeroLink(index));
    }
    let cos = joint.axis.dot(&link.normalize()).abs();
    Ok(if cos > TWIST_THRESHOLD_DEG.to_radians().cos() { JointClass::Twisting } else { JointClass::Revolving })
}

pub fn classify_joints(robot: &RobotDescription) -> Result<Vec<JointClass>, RobotError> {
    (0..robot.joint_count()).map(|i| classify_joint(robot, i)).collect()
}

/// Per-joint absolute angle errors (deg) and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointErrorReport {
    pub joints: Vec<usize>,
    pub errors_deg: Vec<f64>,
    pub summary: Summary,
}

/// `|target_j - actual_j|` without angle wrapping.
pub fn joint_config_error(target: &JointConfig, actual: &JointConfig) -> Result<JointErrorReport, RobotError> {
    let all: Vec<usize> = (0..target.len()).collect();
    joint_config_error_subset(target, actual, &all)
}

/// Same as [`joint_config_error`] restricted to `joints`.
pub fn joint_config_error_subset(
    target: &JointConfig,
    actual: &JointConfig,
    joints: &[usize],
) -> Result<JointErrorReport, RobotError> {
    if target.len() != actual.len() {
        return Err(RobotError::LengthMismatch { expected: target.len(), got: actual.len() });
    }
    if let Some(&index) = joints.iter().find(|&&j| j >= target.len()) {
        return Err(RobotError::IndexOutOfRange { index, len: target.len() });
    }
    let errors_deg: Vec<f64> = joints.iter().map(|&j| (target.0[j] - actual.0[j]).abs()).collect();
    let summary = Summary::of(&errors_deg).ok_or(RobotError::NoJoints)?;
    Ok(JointErrorReport { joints: joints.to_vec(), errors_deg, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn planar() -> RobotDescription {
        let joint = JointSpec::new(RigidTransform::identity(), Vector3::z(), [-180.0, 180.0], Vector3::new(100.0, 0.0, 0.0));
        RobotDescription::new("planar", RigidTransform::identity(), vec![joint.clone(), joint]).unwrap()
    }

    fn single(axis: Vector3<f64>, link: Vector3<f64>) -> RobotDescription {
        RobotDescription::new("one", RigidTransform::identity(), vec![JointSpec::new(RigidTransform::identity(), axis, [-90.0, 90.0], link)]).unwrap()
    }

    #[test]
    fn planar_arm_hand_values() {
        let r = planar();
        let ee = end_effector(&r, &JointConfig::new(vec![90.0, 0.0])).unwrap();
        assert!((ee.translation - Vector3::new(0.0, 200.0, 0.0)).norm() < 1e-9);
        let ee = end_effector(&r, &JointConfig::new(vec![90.0, 90.0])).unwrap();
        assert!((ee.translation - Vector3::new(-100.0, 100.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn zero_config_sums_offsets() {
        let fixed = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 15.0));
        let joints = vec![
            JointSpec::new(fixed, Vector3::z(), [-1.0, 1.0], Vector3::new(0.0, 0.0, 100.0)),
            JointSpec::new(fixed, Vector3::y(), [-1.0, 1.0], Vector3::new(0.0, 20.0, 50.0)),
        ];
        let base = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let r = RobotDescription::new("z", base, joints).unwrap();
        let ee = end_effector(&r, &r.zero_config()).unwrap();
        assert_eq!(ee.translation, Vector3::new(1.0, 22.0, 183.0));
        assert_eq!(ee.rotation, Rotation::identity());
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            forward_kinematics(&planar(), &JointConfig::new(vec![0.0])),
            Err(RobotError::LengthMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_joint(&single(Vector3::z(), Vector3::new(0.0, 0.0, 120.0)), 0), Ok(JointClass::Twisting));
        assert_eq!(classify_joint(&single(Vector3::z(), Vector3::new(100.0, 0.0, 0.0)), 0), Ok(JointClass::Revolving));
        let a = 44.9f64.to_radians();
        let axis = Vector3::new(a.sin(), 0.0, a.cos());
        assert_eq!(classify_joint(&single(axis, Vector3::new(0.0, 0.0, 50.0)), 0), Ok(JointClass::Twisting));
        let a = 45.1f64.to_radians();
        let axis = Vector3::new(a.sin(), 0.0, a.cos());
        assert_eq!(classify_joint(&single(axis, Vector3::new(0.0, 0.0, 50.0)), 0), Ok(JointClass::Revolving));
        assert_eq!(classify_joint(&single(Vector3::z(), Vector3::zeros()), 0), Err(RobotError::ZeroLink(0)));
        assert!(matches!(classify_joint(&planar(), 5), Err(RobotError::IndexOutOfRange { .. })));
    }

    #[test]
    fn zero_link_uses_next_joint() {
        let joints = vec![
            JointSpec::new(RigidTransform::identity(), Vector3::z(), [-1.0, 1.0], Vector3::zeros()),
            JointSpec::new(RigidTransform::identity(), Vector3::x(), [-1.0, 1.0], Vector3::new(0.0, 0.0, 80.0)),
        ];
        let r = RobotDescription::new("zl", RigidTransform::identity(), joints).unwrap();
        assert_eq!(classify_joint(&r, 0), Ok(JointClass::Twisting));
        assert_eq!(classify_joint(&r, 1), Ok(JointClass::Revolving));
    }

    #[test]
    fn joint_error_examples() {
        let a = JointConfig::new(vec![10.0, -20.0, 30.0]);
        let r = joint_config_error(&a, &a).unwrap();
        assert_eq!(r.errors_deg, vec![0.0; 3]);
        assert_eq!(r.summary.max, 0.0);

        let r = joint_config_error(&JointConfig::new(vec![10.0]), &JointConfig::new(vec![259.0])).unwrap();
        assert_eq!(r.errors_deg, vec![249.0]);

        let t = JointConfig::new(vec![12.5, -40.0, 170.0, 0.0]);
        let b = JointConfig::new(vec![10.0, -35.5, -170.0, 2.25]);
        let r = joint_config_error(&t, &b).unwrap();
        assert_eq!(r.errors_deg, vec![2.5, 4.5, 340.0, 2.25]);
        assert_eq!(r.summary.median, (2.5 + 4.5) / 2.0);
        assert_eq!(r.summary.min, 2.25);

        let r = joint_config_error_subset(&t, &b, &[1, 3]).unwrap();
        assert_eq!(r.errors_deg, vec![4.5, 2.25]);
        assert!(matches!(joint_config_error(&t, &a), Err(RobotError::LengthMismatch { .. })));
    }

    #[test]
    fn document_roundtrip_and_validation() {
        let r = planar();
        let back = RobotDescription::from_json(&r.to_json()).unwrap();
        assert_eq!(back.joint_count(), 2);
        let q = JointConfig::new(vec![33.0, -71.0]);
        let a = end_effector(&r, &q).unwrap();
        let b = end_effector(&back, &q).unwrap();
        assert!((a.translation - b.translation).norm() < 1e-9);

        let bad = r.to_json().replace(ROBOT_SCHEMA, "other/v9");
        assert!(matches!(RobotDescription::from_json(&bad), Err(RobotError::Parse(m)) if m.contains("schema")));
        let bad = r.to_json().replacen("-180.0", "999.0", 1);
        assert!(RobotDescription::from_json(&bad).is_err());
    }

    #[test]
    fn physical_limits() {
        let r = planar();
        assert!(JointConfig::new(vec![0.0, 179.0]).check_physical(&r).is_ok());
        assert!(matches!(
            JointConfig::new(vec![0.0, 181.0]).check_physical(&r),
            Err(RobotError::OutsideLimits { joint: 1, .. })
        ));
    }

    fn arm7() -> RobotDescription {
        let axes = [Vector3::z(), Vector3::y(), Vector3::z(), -Vector3::y(), Vector3::z(), Vector3::y(), Vector3::z()];
        let joints = axes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let fixed = RigidTransform::new(Rotation::about_x(0.1 * i as f64), Vector3::new(1.0, -2.0, 3.0 * i as f64));
                JointSpec::new(fixed, *a, [-170.0, 170.0], Vector3::new(5.0, 0.0, 100.0 + i as f64))
            })
            .collect();
        RobotDescription::new("arm7", RigidTransform::new(Rotation::about_z(0.3), Vector3::new(10.0, 20.0, 30.0)), joints).unwrap()
    }

    fn config7() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-170.0f64..170.0, 7)
    }

    proptest! {
        #[test]
        fn fk_is_deterministic(q in config7()) {
            let r = arm7();
            let q = JointConfig::new(q);
            prop_assert_eq!(forward_kinematics(&r, &q).unwrap(), forward_kinematics(&r, &q).unwrap());
        }

        #[test]
        fn fk_composes(q in config7(), k in 1usize..6) {
            let r = arm7();
            let full = forward_kinematics(&r, &JointConfig::new(q.clone())).unwrap();
            let head = chain_poses(&r.base, &r.joints()[..k], &q[..k]);
            let tail = chain_poses(head.last().unwrap(), &r.joints()[k..], &q[k..]);
            let a = full.last().unwrap();
            let b = tail.last().unwrap();
            prop_assert!((a.translation - b.translation).norm() < 1e-9);
            prop_assert!((a.rotation.matrix() - b.rotation.matrix()).abs().max() < 1e-9);
        }

        #[test]
        fn moving_base_moves_every_link(q in config7(), w in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), t in (-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3)) {
            let r = arm7();
            let motion = RigidTransform::new(Rotation::from_axis_angle(&Vector3::new(w.0, w.1, w.2), 0.8), Vector3::new(t.0, t.1, t.2));
            let moved = r.with_base(&motion * &r.base);
            let q = JointConfig::new(q);
            for (a, b) in forward_kinematics(&r, &q).unwrap().iter().zip(forward_kinematics(&moved, &q).unwrap()) {
                let expected = &motion * a;
                prop_assert!((expected.translation - b.translation).norm() < 1e-9);
                prop_assert!((expected.rotation.matrix() - b.rotation.matrix()).abs().max() < 1e-12);
            }
        }

        #[test]
        fn classification_ignores_signs(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.1f64..1.0, lx in -1.0f64..1.0, lz in 0.1f64..1.0) {
            let axis = Vector3::new(x, y, z).normalize();
            let link = Vector3::new(lx * 100.0, 0.0, lz * 100.0);
            let c = classify_joint(&single(axis, link), 0).unwrap();
            prop_assert_eq!(classify_joint(&single(-axis, link), 0).unwrap(), c);
            prop_assert_eq!(classify_joint(&single(axis, -link), 0).unwrap(), c);
        }

        #[test]
        fn joint_error_symmetric_and_triangle(a in config7(), b in config7(), c in config7()) {
            let (a, b, c) = (JointConfig::new(a), JointConfig::new(b), JointConfig::new(c));
            let ab = joint_config_error(&a, &b).unwrap();
            let ba = joint_config_error(&b, &a).unwrap();
            prop_assert_eq!(&ab.errors_deg, &ba.errors_deg);
            let bc = joint_config_error(&b, &c).unwrap();
            let ac = joint_config_error(&a, &c).unwrap();
            for j in 0..7 {
                prop_assert!(ac.errors_deg[j] <= ab.errors_deg[j] + bc.errors_deg[j] + 1e-9);
            }
        }
    }
}
