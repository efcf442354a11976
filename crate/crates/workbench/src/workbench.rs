//! Scene state machine behind the API. One owner mutates it; every request
//! is handled to completion before the next one.

use std::path::PathBuf;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use realign_core::camera::{
    gaze_distance, observer_projection, pixel_to_ray, project, CameraError, CameraIntrinsics, MirrorCamera, ObserverPose,
    ProjectionMatrix,
};
use realign_core::manifold::{ManifoldError, RigidTransform, Rotation, TangentVector};
use realign_core::mesh::SceneMesh;
use realign_core::robot::{forward_kinematics, JointConfig, RobotDescription, RobotError};
use realign_core::session::{link_landmarks, AlignmentSession, Clock, SessionDocument, SessionError};
use realign_core::triangulate::{intersect_rays, AxisErrorMode, Landmark, LandmarkSource, Ray, TriangulationError};

use crate::protocol::{ApiError, Request, Response};

pub const DEFAULT_ROBOT: &str = include_str!("../../core/fixtures/arm7.json");

/// Everything needed to set up a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkbenchConfig {
    pub robot: RobotDescription,
    /// Pose of the real robot in the world; hidden until finalize.
    pub truth: RigidTransform,
    pub config_deg: JointConfig,
    pub virtual_start: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub observer: ObserverPose,
    pub link_half_width_mm: f64,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        let robot = RobotDescription::from_json(DEFAULT_ROBOT).expect("bundled robot parses");
        let truth = RigidTransform::new(Rotation::about_z(25f64.to_radians()), Vector3::new(650.0, -180.0, 0.0));
        Self {
            config_deg: JointConfig::new(vec![0.0, 30.0, 0.0, -60.0, 0.0, 45.0, 0.0]),
            virtual_start: RigidTransform::identity(),
            intrinsics: CameraIntrinsics::new(800.0, 800.0, 640.0, 360.0).expect("valid intrinsics"),
            observer: ObserverPose::look_at(
                &Vector3::new(2600.0, -900.0, 1400.0),
                &Vector3::new(650.0, -180.0, 500.0),
                &Vector3::z(),
            ),
            link_half_width_mm: 45.0,
            robot,
            truth,
        }
    }
}

impl WorkbenchConfig {
    /// Default scene with the real robot displaced by a seeded random
    /// planar offset (up to 150 mm and 20°).
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dx = rng.random_range(-150.0..150.0);
        let dy = rng.random_range(-150.0..150.0);
        let yaw = rng.random_range(-20.0f64..20.0).to_radians();
        cfg.truth = RigidTransform::new(Rotation::about_z(yaw) * cfg.truth.rotation, cfg.truth.translation + Vector3::new(dx, dy, 0.0));
        cfg
    }

    /// Boxes around the real robot's links plus a floor and a back wall.
    pub fn scene_mesh(&self, config: &JointConfig) -> Result<SceneMesh, RobotError> {
        let points: Vec<Vector3<f64>> = link_landmarks(&self.robot, config, LandmarkSource::Real)?
            .iter()
            .map(|l| self.truth.transform_point(&l.position))
            .collect();
        let e = 4000.0;
        let mut mesh = SceneMesh::quad([
            Vector3::new(-e, -e, 0.0),
            Vector3::new(e, -e, 0.0),
            Vector3::new(e, e, 0.0),
            Vector3::new(-e, e, 0.0),
        ])
        .merge(&SceneMesh::quad([
            Vector3::new(-1200.0, -e, 0.0),
            Vector3::new(-1200.0, e, 0.0),
            Vector3::new(-1200.0, e, 3000.0),
            Vector3::new(-1200.0, -e, 3000.0),
        ]));
        for pair in points.windows(2) {
            if let Some(segment) = SceneMesh::segment_box(&pair[0], &pair[1], self.link_half_width_mm) {
                mesh = mesh.merge(&segment);
            }
        }
        Ok(mesh)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mirror {
    pub id: u64,
    pub camera: MirrorCamera,
    pub projection: ProjectionMatrix,
}

pub struct Workbench {
    cfg: WorkbenchConfig,
    config: JointConfig,
    virtual_pose: RigidTransform,
    mesh: SceneMesh,
    mirrors: Vec<Mirror>,
    next_mirror_id: u64,
    session: AlignmentSession,
    revision: u64,
    session_dir: Option<PathBuf>,
}

fn invalid(e: impl std::fmt::Display) -> ApiError {
    ApiError::new("InvalidPayload", e.to_string())
}

fn parse<T: DeserializeOwned>(payload: &Value) -> Result<T, ApiError> {
    let value = if payload.is_null() { json!({}) } else { payload.clone() };
    serde_json::from_value(value).map_err(invalid)
}

fn manifold_code(e: &ManifoldError) -> &'static str {
    match e {
        ManifoldError::EmptyInput => "EmptyInput",
        ManifoldError::DispersedInput { .. } => "DispersedInput",
        ManifoldError::NonConvergent { .. } => "NonConvergent",
        ManifoldError::NotARotation { .. } => "NotARotation",
        ManifoldError::NonFinite(_) => "NonFinite",
    }
}

fn robot_code(e: &RobotError) -> &'static str {
    match e {
        RobotError::LengthMismatch { .. } => "LengthMismatch",
        RobotError::IndexOutOfRange { .. } => "IndexOutOfRange",
        RobotError::OutsideLimits { .. } => "OutsideLimits",
        RobotError::Pose(m) => manifold_code(m),
        _ => "InvalidRobot",
    }
}

fn triangulation_code(e: &TriangulationError) -> &'static str {
    match e {
        TriangulationError::TooFewRays(_) => "TooFewRays",
        TriangulationError::DegenerateRays { .. } => "DegenerateRays",
        TriangulationError::InvalidDirection => "InvalidDirection",
        TriangulationError::LengthMismatch { .. } => "LengthMismatch",
        TriangulationError::Empty => "EmptyInput",
        TriangulationError::IndexOutOfRange { .. } => "IndexOutOfRange",
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::SessionFinalized => "SessionFinalized",
            SessionError::NoTrials => "NoTrials",
            SessionError::NotFinalized => "NotFinalized",
            SessionError::NoPlan => "NoPlan",
            SessionError::StepOutOfRange { .. } => "StepOutOfRange",
            SessionError::Manifold(m) => manifold_code(m),
            SessionError::Triangulation(t) => triangulation_code(t),
            SessionError::Robot(r) => robot_code(r),
            SessionError::Schema(_) | SessionError::Parse(_) => "InvalidDocument",
            SessionError::Io(_) => "IoFailure",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<RobotError> for ApiError {
    fn from(e: RobotError) -> Self {
        ApiError::new(robot_code(&e), e.to_string())
    }
}

impl From<TriangulationError> for ApiError {
    fn from(e: TriangulationError) -> Self {
        ApiError::new(triangulation_code(&e), e.to_string())
    }
}

impl From<CameraError> for ApiError {
    fn from(e: CameraError) -> Self {
        let code = match e {
            CameraError::NoHit => "NoHit",
            CameraError::NonPositiveDistance(_) => "NonPositiveDistance",
            CameraError::AtOpticalCenter => "AtOpticalCenter",
            CameraError::InvalidIntrinsics(_) => "InvalidIntrinsics",
            CameraError::NonFinite(_) => "NonFinite",
        };
        ApiError::new(code, e.to_string())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Nudge {
    #[serde(default)]
    translation_mm: [f64; 3],
    /// Rotation vector, degrees.
    #[serde(default)]
    rotation_deg: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetVirtual {
    transform: RigidTransform,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetConfig {
    config_deg: JointConfig,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PoseSpec {
    LookAt { eye_mm: [f64; 3], target_mm: [f64; 3], up: [f64; 3] },
    Pose { pose: ObserverPose },
}

#[derive(Debug, Deserialize)]
struct MirrorId {
    id: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Evaluate {
    real: Option<Vec<Landmark>>,
    #[serde(rename = "virtual")]
    virtual_: Option<Vec<Landmark>>,
    #[serde(default)]
    axis_error: AxisErrorMode,
}

#[derive(Debug, Deserialize)]
struct Target {
    target_deg: JointConfig,
}

#[derive(Debug, Deserialize)]
struct StepIndex {
    index: usize,
}

#[derive(Debug, Deserialize)]
struct Actual {
    actual_deg: JointConfig,
}

#[derive(Debug, Deserialize)]
struct SaveSession {
    name: Option<String>,
}

#[derive(Debug, Deserialize)]
struct LoadSession {
    name: Option<String>,
    document: Option<SessionDocument>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
enum Viewport {
    Mirror(u64),
    Main(MainTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MainTag {
    Main,
}

#[derive(Debug, Deserialize)]
struct ViewportRequest {
    viewport: Viewport,
}

#[derive(Debug, Deserialize)]
struct Pick {
    viewport: Viewport,
    pixel: [f64; 2],
}

#[derive(Debug, Deserialize)]
struct Triangulate {
    rays: Vec<Ray>,
}

#[derive(Debug, Serialize)]
struct ProjectedPoint {
    label: String,
    pixel: [f64; 2],
    depth: f64,
}

/// `(payload, mutated)` for a successful verb.
type Handled = Result<(Value, bool), ApiError>;

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload serializes")
}

fn valid_name(name: &str) -> Result<String, ApiError> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if !ok {
        return Err(ApiError::new("InvalidPayload", format!("invalid session name {name:?}")));
    }
    Ok(if name.ends_with(".json") { name.to_string() } else { format!("{name}.json") })
}

impl Workbench {
    pub fn new(cfg: WorkbenchConfig, clock: Box<dyn Clock>) -> Result<Self, RobotError> {
        cfg.config_deg.check_physical(&cfg.robot)?;
        let mesh = cfg.scene_mesh(&cfg.config_deg)?;
        let session = AlignmentSession::new(cfg.robot.clone(), Some(mesh.clone()), clock);
        Ok(Self {
            config: cfg.config_deg.clone(),
            virtual_pose: cfg.virtual_start,
            mesh,
            mirrors: Vec::new(),
            next_mirror_id: 1,
            session,
            revision: 0,
            session_dir: None,
            cfg,
        })
    }

    /// Directory used by `save_session` / `load_session` with a `name`.
    pub fn with_session_dir(mut self, dir: PathBuf) -> Self {
        self.session_dir = Some(dir);
        self
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn session(&self) -> &AlignmentSession {
        &self.session
    }

    pub fn virtual_pose(&self) -> &RigidTransform {
        &self.virtual_pose
    }

    pub fn mirrors(&self) -> &[Mirror] {
        &self.mirrors
    }

    pub fn observer_projection(&self) -> ProjectionMatrix {
        observer_projection(&self.cfg.intrinsics, &self.cfg.observer)
    }

    pub fn handle(&mut self, req: &Request) -> Response {
        match self.dispatch(req) {
            Ok((payload, mutated)) => {
                if mutated {
                    self.revision += 1;
                }
                Response::ok(req, self.revision, payload)
            }
            Err(e) => Response::err(req, self.revision, e),
        }
    }

    fn dispatch(&mut self, req: &Request) -> Handled {
        let p = &req.payload;
        match req.verb.as_str() {
            "get_scene" => Ok((self.scene(), false)),
            "nudge_virtual" => self.nudge(parse(p)?),
            "set_virtual" => self.set_virtual(parse::<SetVirtual>(p)?.transform),
            "set_config" => self.set_config(parse::<SetConfig>(p)?.config_deg),
            "add_mirror" => self.add_mirror(parse(p)?),
            "remove_mirror" => self.remove_mirror(parse::<MirrorId>(p)?.id),
            "record_trial" => self.record_trial(),
            "finalize" => self.finalize(),
            "evaluate" => self.evaluate(parse(p)?),
            "plan" => {
                let plan = self.session.make_guidance_plan(parse::<Target>(p)?.target_deg)?;
                Ok((to_value(plan), true))
            }
            "mark_step" => {
                let plan = self.session.mark_step_done(parse::<StepIndex>(p)?.index)?;
                Ok((json!({ "plan": plan, "complete": plan.is_complete() }), true))
            }
            "score" => {
                let record = self.session.score_execution(parse::<Actual>(p)?.actual_deg)?;
                Ok((to_value(record), true))
            }
            "save_session" => self.save_session(parse(p)?),
            "load_session" => self.load_session(parse(p)?),
            "project_reference" => self.project_reference(parse::<ViewportRequest>(p)?.viewport),
            "pick" => self.pick(parse(p)?),
            "triangulate" => {
                let hit = intersect_rays(&parse::<Triangulate>(p)?.rays)?;
                Ok((to_value(&hit), false))
            }
            "hello" => Err(ApiError::new("AlreadyNegotiated", "hello is only valid as the first message")),
            other => Err(ApiError::new("UnknownVerb", format!("unknown verb {other:?}"))),
        }
    }

    /// Everything a client may see. The real robot's pose and the scene
    /// geometry appear only once the registration is finalized.
    pub fn scene(&self) -> Value {
        let doc = self.session.document();
        let mut scene = json!({
            "robot": doc.robot,
            "config_deg": self.config,
            "virtual": { "pose": self.virtual_pose },
            "observer": {
                "id": "main",
                "pose": self.cfg.observer,
                "intrinsics": self.cfg.intrinsics,
                "projection": self.observer_projection(),
            },
            "mirrors": self.mirrors.iter().map(|m| json!({
                "id": m.id,
                "distance_mm": m.camera.distance_mm,
                "observer": m.camera.observer,
                "intrinsics": m.camera.intrinsics,
                "pose": m.camera.pose,
                "projection": m.projection,
            })).collect::<Vec<_>>(),
            "session": {
                "finalized": self.session.is_finalized(),
                "trials": doc.trials.len(),
                "suggested_trials": doc.suggested_trials,
                "registration": doc.registration,
                "evaluations": doc.evaluations.iter().map(|e| e.report).collect::<Vec<_>>(),
                "guidance": doc.guidance,
                "executions": doc.executions.iter().map(|e| &e.report).collect::<Vec<_>>(),
            },
        });
        if self.session.is_finalized() {
            scene["truth"] = json!({ "pose": self.cfg.truth, "mesh": self.mesh });
        }
        scene
    }

    fn ensure_aligning(&self) -> Result<(), ApiError> {
        if self.session.is_finalized() {
            return Err(SessionError::SessionFinalized.into());
        }
        Ok(())
    }

    /// Rotates about the virtual base origin, then translates in the world.
    fn nudge(&mut self, n: Nudge) -> Handled {
        self.ensure_aligning()?;
        let w = Vector3::from(n.rotation_deg).map(f64::to_radians);
        let dt = Vector3::from(n.translation_mm);
        if !w.iter().chain(dt.iter()).all(|v| v.is_finite()) {
            return Err(invalid("non-finite nudge"));
        }
        let delta = Rotation::exp(&TangentVector(w));
        self.virtual_pose = RigidTransform::new(delta * self.virtual_pose.rotation, self.virtual_pose.translation + dt);
        Ok((json!({ "pose": self.virtual_pose }), true))
    }

    fn set_virtual(&mut self, t: RigidTransform) -> Handled {
        self.ensure_aligning()?;
        if !t.translation.iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite translation"));
        }
        self.virtual_pose = t;
        Ok((json!({ "pose": self.virtual_pose }), true))
    }

    fn set_config(&mut self, q: JointConfig) -> Handled {
        self.ensure_aligning()?;
        q.check_physical(&self.cfg.robot)?;
        self.mesh = self.cfg.scene_mesh(&q)?;
        self.config = q;
        Ok((json!({ "config_deg": self.config }), true))
    }

    fn add_mirror(&mut self, spec: PoseSpec) -> Handled {
        let observer = match spec {
            PoseSpec::LookAt { eye_mm, target_mm, up } => {
                let (eye, target) = (Vector3::from(eye_mm), Vector3::from(target_mm));
                if (target - eye).norm() < 1e-9 {
                    return Err(invalid("eye and target coincide"));
                }
                ObserverPose::look_at(&eye, &target, &Vector3::from(up))
            }
            PoseSpec::Pose { pose } => pose,
        };
        let gaze = Ray::new(observer.center(), observer.optical_axis())?;
        let distance = gaze_distance(&gaze, &self.mesh)?;
        let camera = MirrorCamera::new(&self.cfg.intrinsics, &observer, distance)?;
        let mirror = Mirror { id: self.next_mirror_id, camera, projection: camera.projection() };
        self.next_mirror_id += 1;
        self.mirrors.push(mirror);
        Ok((to_value(&mirror), true))
    }

    fn remove_mirror(&mut self, id: u64) -> Handled {
        let index = self
            .mirrors
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| ApiError::new("UnknownMirror", format!("no mirror with id {id}")))?;
        self.mirrors.remove(index);
        Ok((json!({ "removed": id }), true))
    }

    fn record_trial(&mut self) -> Handled {
        let trial = self.session.record_trial(self.virtual_pose, self.config.clone(), self.mirrors.len())?;
        Ok((to_value(trial), true))
    }

    fn finalize(&mut self) -> Handled {
        let was_final = self.session.is_finalized();
        let registration = self.session.finalize_registration()?.clone();
        let (rotation_rad, translation_mm) = registration.mean.deviation(&self.cfg.truth);
        Ok((
            json!({
                "registration": registration,
                "truth": self.cfg.truth,
                "error": { "rotation_rad": rotation_rad, "translation_mm": translation_mm },
            }),
            !was_final,
        ))
    }

    /// Landmarks at the link-frame origins: the real robot in the world and
    /// the virtual robot in its model frame.
    pub fn link_landmark_pairs(&self) -> Result<(Vec<Landmark>, Vec<Landmark>), RobotError> {
        let model = link_landmarks(&self.cfg.robot, &self.config, LandmarkSource::Virtual)?;
        let real = model
            .iter()
            .map(|l| Landmark::new(self.cfg.truth.transform_point(&l.position), LandmarkSource::Real, l.label.clone()))
            .collect();
        Ok((real, model))
    }

    fn evaluate(&mut self, e: Evaluate) -> Handled {
        let (real, virtual_) = match (e.real, e.virtual_) {
            (Some(r), Some(v)) => (r, v),
            (None, None) => self.link_landmark_pairs()?,
            _ => return Err(invalid("give both real and virtual landmarks, or neither")),
        };
        let report = self.session.evaluate_registration_with(&real, &virtual_, e.axis_error)?;
        Ok((json!({ "report": report, "cells": report.table_cells() }), true))
    }

    fn session_path(&self, name: &str) -> Result<PathBuf, ApiError> {
        let dir = self
            .session_dir
            .as_ref()
            .ok_or_else(|| ApiError::new("NoSessionDir", "server has no session directory"))?;
        Ok(dir.join(valid_name(name)?))
    }

    /// Writes to the session directory when a name is given; the document
    /// itself is returned only after finalize so it cannot leak the truth.
    fn save_session(&mut self, s: SaveSession) -> Handled {
        let doc = self.session.document();
        let mut out = json!({});
        if let Some(name) = s.name {
            let path = self.session_path(&name)?;
            doc.save(&path)?;
            out["saved"] = json!(path.file_name().map(|n| n.to_string_lossy().into_owned()));
        }
        if self.session.is_finalized() {
            out["document"] = to_value(doc);
        }
        Ok((out, false))
    }

    fn load_session(&mut self, l: LoadSession) -> Handled {
        let doc = match (l.name, l.document) {
            (Some(name), None) => SessionDocument::load(&self.session_path(&name)?)?,
            (None, Some(doc)) => doc,
            _ => return Err(invalid("give either name or document")),
        };
        if doc.robot.joint_count() != self.cfg.robot.joint_count() {
            return Err(RobotError::LengthMismatch { expected: self.cfg.robot.joint_count(), got: doc.robot.joint_count() }.into());
        }
        if let Some(last) = doc.trials.last() {
            self.virtual_pose = last.transform;
            self.mesh = self.cfg.scene_mesh(&last.config_deg)?;
            self.config = last.config_deg.clone();
        }
        let trials = doc.trials.len();
        self.session.replace_document(doc);
        Ok((json!({ "trials": trials, "finalized": self.session.is_finalized() }), true))
    }

    fn viewport_camera(&self, v: Viewport) -> Result<(CameraIntrinsics, ObserverPose, ProjectionMatrix), ApiError> {
        match v {
            Viewport::Main(_) => Ok((self.cfg.intrinsics, self.cfg.observer, self.observer_projection())),
            Viewport::Mirror(id) => self
                .mirrors
                .iter()
                .find(|m| m.id == id)
                .map(|m| (m.camera.intrinsics, m.camera.pose, m.projection))
                .ok_or_else(|| ApiError::new("UnknownMirror", format!("no mirror with id {id}"))),
        }
    }

    fn project_points(p: &ProjectionMatrix, points: &[(String, Vector3<f64>)]) -> Vec<ProjectedPoint> {
        points
            .iter()
            .filter_map(|(label, x)| {
                project(p, x).ok().map(|pr| ProjectedPoint { label: label.clone(), pixel: pr.pixel.into(), depth: pr.depth })
            })
            .collect()
    }

    /// Link points of the real robot (`reference`) and of the virtual robot
    /// at its current pose, projected into one viewport.
    fn project_reference(&self, v: Viewport) -> Handled {
        let (_, _, projection) = self.viewport_camera(v)?;
        let model: Vec<(String, Vector3<f64>)> = link_landmarks(&self.cfg.robot, &self.config, LandmarkSource::Virtual)?
            .into_iter()
            .map(|l| (l.label, l.position))
            .collect();
        let place = |t: &RigidTransform| -> Vec<(String, Vector3<f64>)> {
            model.iter().map(|(label, p)| (label.clone(), t.transform_point(p))).collect()
        };
        Ok((
            json!({
                "reference": Self::project_points(&projection, &place(&self.cfg.truth)),
                "virtual": Self::project_points(&projection, &place(&self.virtual_pose)),
            }),
            false,
        ))
    }

    fn pick(&self, pick: Pick) -> Handled {
        let (k, pose, _) = self.viewport_camera(pick.viewport)?;
        let ray = pixel_to_ray(&k, &pose, &Vector2::from(pick.pixel));
        let hit = self.mesh.nearest_hit(&ray).map(|h| {
            json!({ "distance_mm": h.distance, "point_mm": ray.point_at(h.distance), "triangle": h.triangle })
        });
        Ok((json!({ "ray": ray, "hit": hit }), false))
    }

    /// End-effector pose of the virtual robot in the world.
    pub fn virtual_end_effector(&self) -> Result<RigidTransform, RobotError> {
        let ee = *forward_kinematics(&self.cfg.robot, &self.config)?.last().expect("at least one joint");
        Ok(&self.virtual_pose * &ee)
    }
}

/// Runs requests in order against a fresh workbench.
pub fn run_script(workbench: &mut Workbench, requests: &[Request]) -> Vec<Response> {
    requests.iter().map(|r| workbench.handle(r)).collect()
}
