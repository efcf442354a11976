//! Alignment workflow: collect trials, finalize the averaged registration,
//! evaluate it against landmark pairs, guide joint-by-joint repositioning
//! and score executions. Everything persists in a replayable document.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{transform_mean, ManifoldError, RigidTransform};
use crate::mesh::SceneMesh;
use crate::robot::{joint_config_error, JointConfig, JointErrorReport, RobotDescription, RobotError};
use crate::triangulate::{pair_misalignment_with, AxisErrorMode, Landmark, MisalignmentReport, TriangulationError};

pub const SESSION_SCHEMA: &str = "realign/alignment-session/v1";

/// Trial count the protocol suggests before finalizing.
pub const SUGGESTED_TRIALS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("session is finalized; no more trials can be recorded")]
    SessionFinalized,
    #[error("no trials recorded")]
    NoTrials,
    #[error("registration has not been finalized")]
    NotFinalized,
    #[error("no guidance plan")]
    NoPlan,
    #[error("guidance step {index} out of range for {len} steps")]
    StepOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Triangulation(#[from] TriangulationError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error("unsupported session schema {0:?}")]
    Schema(String),
    #[error("cannot parse session document: {0}")]
    Parse(String),
    #[error("session document i/o: {0}")]
    Io(String),
}

/// Millisecond time source. Implementations must never go backwards.
pub trait Clock: Send {
    fn now_ms(&self) -> u64;
}

/// Wall clock measured from construction.
#[derive(Debug, Clone)]
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

/// Externally driven clock; clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(Arc::new(AtomicU64::new(start_ms)))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: u64) {
        self.0.fetch_max(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Advances by a fixed step on every reading.
#[derive(Debug)]
pub struct TickClock {
    next: AtomicU64,
    step: u64,
}

impl TickClock {
    pub fn new(step_ms: u64) -> Self {
        Self { next: AtomicU64::new(0), step: step_ms }
    }
}

impl Clock for TickClock {
    fn now_ms(&self) -> u64 {
        self.next.fetch_add(self.step, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrial {
    pub index: usize,
    /// Virtual-to-real registration estimated in this trial.
    pub transform: RigidTransform,
    pub config_deg: JointConfig,
    pub mirrors: usize,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialDeviation {
    pub rotation_rad: f64,
    pub translation_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub mean: RigidTransform,
    pub deviations: Vec<TrialDeviation>,
    pub trial_count: usize,
}

impl RegistrationResult {
    pub fn from_trials(trials: &[AlignmentTrial]) -> Result<Self, SessionError> {
        if trials.is_empty() {
            return Err(SessionError::NoTrials);
        }
        let transforms: Vec<RigidTransform> = trials.iter().map(|t| t.transform).collect();
        let mean = transform_mean(&transforms)?;
        let deviations = transforms
            .iter()
            .map(|t| {
                let (rotation_rad, translation_mm) = t.deviation(&mean);
                TrialDeviation { rotation_rad, translation_mm }
            })
            .collect();
        Ok(Self { mean, deviations, trial_count: trials.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub real_landmarks: Vec<Landmark>,
    /// Landmarks in the virtual model frame, before registration.
    pub virtual_landmarks: Vec<Landmark>,
    pub axis_error: AxisErrorMode,
    pub report: MisalignmentReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceStep {
    pub joint: usize,
    pub target_deg: f64,
    pub status: StepStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidancePlan {
    pub target_deg: JointConfig,
    pub steps: Vec<GuidanceStep>,
    pub created_ms: u64,
}

impl GuidancePlan {
    /// One step per joint, base to tip.
    pub fn new(target: JointConfig, created_ms: u64) -> Self {
        let steps = target
            .degrees()
            .iter()
            .enumerate()
            .map(|(joint, &target_deg)| GuidanceStep { joint, target_deg, status: StepStatus::Pending })
            .collect();
        Self { target_deg: target, steps, created_ms }
    }

    pub fn is_complete(&self) -> bool {
        self.steps.iter().all(|s| s.status == StepStatus::Done)
    }

    /// First pending step in chain order.
    pub fn next_step(&self) -> Option<&GuidanceStep> {
        self.steps.iter().find(|s| s.status == StepStatus::Pending)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub target_deg: JointConfig,
    pub actual_deg: JointConfig,
    pub report: JointErrorReport,
    pub start_ms: u64,
    pub end_ms: u64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub length: String,
    pub angle: String,
    pub joint_angle: String,
    pub time: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            length: "mm".into(),
            angle: "rad".into(),
            joint_angle: "deg".into(),
            time: "ms since session start".into(),
        }
    }
}

/// Self-contained persisted session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub schema: String,
    pub units: Units,
    pub suggested_trials: usize,
    pub robot: RobotDescription,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneMesh>,
    pub trials: Vec<AlignmentTrial>,
    pub registration: Option<RegistrationResult>,
    pub evaluations: Vec<Evaluation>,
    pub guidance: Option<GuidancePlan>,
    pub executions: Vec<ExecutionRecord>,
    /// Latest timestamp handed out.
    pub clock_ms: u64,
}

impl SessionDocument {
    pub fn new(robot: RobotDescription, scene: Option<SceneMesh>) -> Self {
        Self {
            schema: SESSION_SCHEMA.into(),
            units: Units::default(),
            suggested_trials: SUGGESTED_TRIALS,
            robot,
            scene,
            trials: Vec::new(),
            registration: None,
            evaluations: Vec::new(),
            guidance: None,
            executions: Vec::new(),
            clock_ms: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SessionError::Parse(e.to_string()))?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(SESSION_SCHEMA) => {}
            Some(other) => return Err(SessionError::Schema(other.into())),
            None => return Err(SessionError::Schema(String::new())),
        }
        serde_json::from_value(value).map_err(|e| SessionError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        std::fs::write(path, self.to_json()).map_err(|e| SessionError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path).map_err(|e| SessionError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Single-writer session state machine.
pub struct AlignmentSession {
    doc: SessionDocument,
    clock: Box<dyn Clock>,
    /// Clock reading that corresponds to `doc.clock_ms`.
    clock_origin: u64,
}

impl std::fmt::Debug for AlignmentSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AlignmentSession").field("doc", &self.doc).finish_non_exhaustive()
    }
}

impl AlignmentSession {
    pub fn new(robot: RobotDescription, scene: Option<SceneMesh>, clock: Box<dyn Clock>) -> Self {
        Self::resume(SessionDocument::new(robot, scene), clock)
    }

    /// Continues a stored session; new timestamps follow the stored ones.
    pub fn resume(doc: SessionDocument, clock: Box<dyn Clock>) -> Self {
        let clock_origin = clock.now_ms();
        Self { doc, clock, clock_origin }
    }

    /// Swaps in another document, keeping this session's clock.
    pub fn replace_document(&mut self, doc: SessionDocument) -> SessionDocument {
        self.clock_origin = self.clock.now_ms();
        std::mem::replace(&mut self.doc, doc)
    }

    pub fn document(&self) -> &SessionDocument {
        &self.doc
    }

    pub fn into_document(self) -> SessionDocument {
        self.doc
    }

    pub fn robot(&self) -> &RobotDescription {
        &self.doc.robot
    }

    pub fn trials(&self) -> &[AlignmentTrial] {
        &self.doc.trials
    }

    pub fn registration(&self) -> Option<&RegistrationResult> {
        self.doc.registration.as_ref()
    }

    pub fn plan(&self) -> Option<&GuidancePlan> {
        self.doc.guidance.as_ref()
    }

    pub fn is_finalized(&self) -> bool {
        self.doc.registration.is_some()
    }

    /// Next timestamp; strictly later than every earlier one.
    fn stamp(&mut self) -> u64 {
        let elapsed = self.clock.now_ms().saturating_sub(self.clock_origin);
        let candidate = self.doc.clock_ms.saturating_add(elapsed.max(1));
        self.clock_origin += elapsed;
        self.doc.clock_ms = candidate;
        candidate
    }

    fn last_event_ms(&self) -> u64 {
        self.doc.clock_ms
    }

    pub fn record_trial(
        &mut self,
        transform: RigidTransform,
        config: JointConfig,
        mirrors: usize,
    ) -> Result<&AlignmentTrial, SessionError> {
        if self.is_finalized() {
            return Err(SessionError::SessionFinalized);
        }
        if config.len() != self.doc.robot.joint_count() {
            return Err(RobotError::LengthMismatch { expected: self.doc.robot.joint_count(), got: config.len() }.into());
        }
        let start_ms = self.last_event_ms();
        let end_ms = self.stamp();
        let index = self.doc.trials.len();
        self.doc.trials.push(AlignmentTrial { index, transform, config_deg: config, mirrors, start_ms, end_ms });
        Ok(&self.doc.trials[index])
    }

    /// Averages all trials and freezes the result. Repeated calls return
    /// the stored registration unchanged.
    pub fn finalize_registration(&mut self) -> Result<&RegistrationResult, SessionError> {
        if self.doc.registration.is_none() {
            self.doc.registration = Some(RegistrationResult::from_trials(&self.doc.trials)?);
        }
        Ok(self.doc.registration.as_ref().expect("just stored"))
    }

    pub fn evaluate_registration(
        &mut self,
        real: &[Landmark],
        virtual_: &[Landmark],
    ) -> Result<&MisalignmentReport, SessionError> {
        self.evaluate_registration_with(real, virtual_, AxisErrorMode::default())
    }

    pub fn evaluate_registration_with(
        &mut self,
        real: &[Landmark],
        virtual_: &[Landmark],
        mode: AxisErrorMode,
    ) -> Result<&MisalignmentReport, SessionError> {
        let registration = self.doc.registration.as_ref().ok_or(SessionError::NotFinalized)?;
        let report = evaluate(&registration.mean, real, virtual_, mode)?;
        self.doc.evaluations.push(Evaluation {
            real_landmarks: real.to_vec(),
            virtual_landmarks: virtual_.to_vec(),
            axis_error: mode,
            report,
        });
        Ok(&self.doc.evaluations.last().expect("just pushed").report)
    }

    pub fn make_guidance_plan(&mut self, target: JointConfig) -> Result<&GuidancePlan, SessionError> {
        if !self.is_finalized() {
            return Err(SessionError::NotFinalized);
        }
        if target.len() != self.doc.robot.joint_count() {
            return Err(RobotError::LengthMismatch { expected: self.doc.robot.joint_count(), got: target.len() }.into());
        }
        let created_ms = self.stamp();
        self.doc.guidance = Some(GuidancePlan::new(target, created_ms));
        Ok(self.doc.guidance.as_ref().expect("just stored"))
    }

    pub fn mark_step_done(&mut self, index: usize) -> Result<&GuidancePlan, SessionError> {
        let plan = self.doc.guidance.as_mut().ok_or(SessionError::NoPlan)?;
        let len = plan.steps.len();
        plan.steps.get_mut(index).ok_or(SessionError::StepOutOfRange { index, len })?.status = StepStatus::Done;
        Ok(plan)
    }

    /// Scores `actual` against the plan target and records the elapsed
    /// time since the plan (or the previous execution).
    pub fn score_execution(&mut self, actual: JointConfig) -> Result<&ExecutionRecord, SessionError> {
        let plan = self.doc.guidance.as_ref().ok_or(SessionError::NoPlan)?;
        let target = plan.target_deg.clone();
        let report = joint_config_error(&target, &actual)?;
        let start_ms = self.doc.executions.last().map_or(plan.created_ms, |e| e.end_ms);
        let end_ms = self.stamp();
        self.doc.executions.push(ExecutionRecord {
            target_deg: target,
            actual_deg: actual,
            report,
            start_ms,
            end_ms,
            elapsed_ms: end_ms - start_ms,
        });
        Ok(self.doc.executions.last().expect("just pushed"))
    }
}

/// Applies the registration to the virtual landmarks and compares them with
/// the real ones.
pub fn evaluate(
    registration: &RigidTransform,
    real: &[Landmark],
    virtual_: &[Landmark],
    mode: AxisErrorMode,
) -> Result<MisalignmentReport, TriangulationError> {
    let registered: Vec<Landmark> = virtual_
        .iter()
        .map(|l| Landmark { position: registration.transform_point(&l.position), ..l.clone() })
        .collect();
    pair_misalignment_with(real, &registered, mode)
}

/// Outcome of recomputing a document's derived results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub registration: Option<RegistrationResult>,
    pub evaluations: Vec<MisalignmentReport>,
    pub executions: Vec<JointErrorReport>,
    /// Fields whose recomputed value differs from the stored one.
    pub mismatches: Vec<String>,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn same_bits<T: Serialize>(a: &T, b: &T) -> bool {
    serde_json::to_string(a).ok() == serde_json::to_string(b).ok()
}

/// Recomputes registration, evaluations and execution scores from the raw
/// inputs stored in `doc` and compares them bitwise with the stored values.
pub fn replay(doc: &SessionDocument) -> Result<ReplayOutcome, SessionError> {
    let mut mismatches = Vec::new();
    let registration = match &doc.registration {
        Some(stored) => {
            let fresh = RegistrationResult::from_trials(&doc.trials)?;
            if !same_bits(stored, &fresh) {
                mismatches.push("registration".to_string());
            }
            Some(fresh)
        }
        None => None,
    };
    let mut evaluations = Vec::new();
    for (i, e) in doc.evaluations.iter().enumerate() {
        let mean = registration.as_ref().ok_or(SessionError::NotFinalized)?.mean;
        let fresh = evaluate(&mean, &e.real_landmarks, &e.virtual_landmarks, e.axis_error)?;
        if !same_bits(&e.report, &fresh) {
            mismatches.push(format!("evaluations[{i}]"));
        }
        evaluations.push(fresh);
    }
    let mut executions = Vec::new();
    for (i, x) in doc.executions.iter().enumerate() {
        let fresh = joint_config_error(&x.target_deg, &x.actual_deg)?;
        if !same_bits(&x.report, &fresh) {
            mismatches.push(format!("executions[{i}]"));
        }
        executions.push(fresh);
    }
    Ok(ReplayOutcome { registration, evaluations, executions, mismatches })
}

/// Landmarks at the link-frame origins of `robot` at `q`, in the robot's
/// own frame when `base` is identity.
pub fn link_landmarks(
    robot: &RobotDescription,
    q: &JointConfig,
    source: crate::triangulate::LandmarkSource,
) -> Result<Vec<Landmark>, RobotError> {
    let poses = crate::robot::forward_kinematics(robot, q)?;
    let mut points: Vec<Vector3<f64>> = vec![robot.base.translation];
    points.extend(poses.iter().map(|p| p.translation));
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(i, p)| Landmark::new(p, source, format!("link{i}")))
        .collect())
}
