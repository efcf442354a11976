//! Monte Carlo model of interactive alignment under one or more views.
//!
//! Each view observes the true registration with Gaussian translation
//! error whose spread along that view's optical axis is `k` times the
//! lateral spread, plus isotropic axis-angle rotation error. Views are
//! fused by information weighting (translation) and the Karcher mean
//! (rotation). All magnitudes are simulated.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::ObserverPose;
use crate::manifold::{geodesic_distance, rotation_mean, transform_mean, ManifoldError, RigidTransform, Rotation, TangentVector};
use crate::stats::{percentile_sorted, Summary};
use crate::triangulate::{AxisErrorMode, MisalignmentReport};

pub const EXPERIMENT_SCHEMA: &str = "realign/experiment/v1";
pub const SIMULATED_LABEL: &str = "simulated";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("at least one view is required")]
    NoViews,
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("report has no trials")]
    EmptyReport,
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("cannot parse experiment config: {0}")]
    Parse(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-view translation σ across the optical axis, mm.
    pub lateral_sigma_mm: f64,
    /// σ along the optical axis as a multiple of the lateral σ.
    pub depth_factor: f64,
    /// Isotropic axis-angle σ, degrees.
    pub rotation_sigma_deg: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { lateral_sigma_mm: 5.0, depth_factor: 3.0, rotation_sigma_deg: 2.0 }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self { lateral_sigma_mm: 0.0, depth_factor: 1.0, rotation_sigma_deg: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.lateral_sigma_mm >= 0.0 && self.lateral_sigma_mm.is_finite()) {
            return Err(SimError::InvalidNoise(format!("lateral sigma {} must be >= 0", self.lateral_sigma_mm)));
        }
        if !(self.depth_factor >= 1.0 && self.depth_factor.is_finite()) {
            return Err(SimError::InvalidNoise(format!("depth factor {} must be >= 1", self.depth_factor)));
        }
        if !(self.rotation_sigma_deg >= 0.0 && self.rotation_sigma_deg.is_finite()) {
            return Err(SimError::InvalidNoise(format!("rotation sigma {} must be >= 0", self.rotation_sigma_deg)));
        }
        Ok(())
    }
}

/// Three orthogonal viewpoints 1.5 m from `target`, looking along +z, +x and +y.
pub fn orthogonal_observers(target: &Vector3<f64>) -> Vec<ObserverPose> {
    let d = 1500.0;
    vec![
        ObserverPose::look_at(&(target - Vector3::z() * d), target, &Vector3::y()),
        ObserverPose::look_at(&(target - Vector3::x() * d), target, &Vector3::z()),
        ObserverPose::look_at(&(target - Vector3::y() * d), target, &Vector3::z()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub seed: u64,
    pub views: usize,
    pub average_n: usize,
    pub truth: RigidTransform,
    pub observers: Vec<ObserverPose>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let truth = RigidTransform::new(
            Rotation::from_axis_angle(&Vector3::new(0.2, -0.4, 1.0), 0.35),
            Vector3::new(420.0, -130.0, 75.0),
        );
        Self { trials: 1000, seed: 42, views: 1, average_n: 1, observers: orthogonal_observers(&truth.translation), truth }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.trials == 0 {
            return Err(SimError::InvalidConfig("trials must be >= 1".into()));
        }
        if self.views == 0 {
            return Err(SimError::NoViews);
        }
        if self.average_n == 0 {
            return Err(SimError::InvalidConfig("average_n must be >= 1".into()));
        }
        if self.observers.len() < self.views {
            return Err(SimError::InvalidConfig(format!(
                "{} views requested but only {} observer poses",
                self.views,
                self.observers.len()
            )));
        }
        Ok(())
    }

    pub fn with_condition(&self, views: usize, average_n: usize) -> Self {
        Self { views, average_n, ..self.clone() }
    }
}

/// Experiment file: config plus noise model, tagged with a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentFile {
    pub schema: String,
    #[serde(flatten)]
    pub config: ExperimentConfig,
    #[serde(default)]
    pub noise: NoiseModel,
}

impl ExperimentFile {
    pub fn new(config: ExperimentConfig, noise: NoiseModel) -> Self {
        Self { schema: EXPERIMENT_SCHEMA.into(), config, noise }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let file: Self = serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        if file.schema != EXPERIMENT_SCHEMA {
            return Err(SimError::Parse(format!("unsupported schema {:?}", file.schema)));
        }
        file.config.validate()?;
        file.noise.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experiment file serializes")
    }
}

fn normal3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// One simulated user alignment of `truth` seen through `views`.
///
/// Every view consumes exactly six normal draws (three translation, then
/// three rotation), so noise streams stay paired across view counts.
pub fn sample_user_alignment<R: Rng + ?Sized>(
    truth: &RigidTransform,
    views: &[ObserverPose],
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<RigidTransform, SimError> {
    if views.is_empty() {
        return Err(SimError::NoViews);
    }
    let sigma = noise.lateral_sigma_mm;
    let k = noise.depth_factor;
    let rot_sigma = noise.rotation_sigma_deg.to_radians();
    let spread = Matrix3::from_diagonal(&Vector3::new(sigma, sigma, k * sigma));
    let weight = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.0 / (k * k)));

    let mut info = Matrix3::zeros();
    let mut info_error = Vector3::zeros();
    let mut first_error = Vector3::zeros();
    let mut rotations = Vec::with_capacity(views.len());
    for (j, view) in views.iter().enumerate() {
        let to_camera = view.transform().rotation.matrix();
        let error = to_camera.transpose() * spread * normal3(rng);
        let eps = normal3(rng) * rot_sigma;
        let lambda = to_camera.transpose() * weight * to_camera;
        info += lambda;
        info_error += lambda * error;
        if j == 0 {
            first_error = error;
        }
        rotations.push(truth.rotation * Rotation::exp(&TangentVector(eps)));
    }
    let translation_error = if views.len() == 1 {
        first_error
    } else {
        info.cholesky().ok_or_else(|| SimError::InvalidConfig("view information is singular".into()))?.solve(&info_error)
    };
    let rotation = if rotations.len() == 1 { rotations[0] } else { rotation_mean(&rotations)? };
    Ok(RigidTransform::new(rotation, truth.translation + translation_error))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    /// Estimate minus truth, world frame, mm.
    pub error_mm: [f64; 3],
    pub l2_mm: f64,
    pub rotation_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStatistics {
    pub summary: Summary,
    pub p05: f64,
    pub p25: f64,
    pub p75: f64,
    pub p95: f64,
}

impl ErrorStatistics {
    pub fn of(values: &[f64]) -> Option<Self> {
        let summary = Summary::of(values)?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            summary,
            p05: percentile_sorted(&sorted, 5.0),
            p25: percentile_sorted(&sorted, 25.0),
            p75: percentile_sorted(&sorted, 75.0),
            p95: percentile_sorted(&sorted, 95.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub config: ExperimentConfig,
    pub noise: NoiseModel,
    pub translation_l2: ErrorStatistics,
    pub rotation_deg: ErrorStatistics,
    /// Per-axis absolute error mean/std with their norms.
    pub table: MisalignmentReport,
    pub rows: Vec<TrialRow>,
}

impl ExperimentReport {
    /// Derives every statistic from `rows`.
    pub fn from_rows(config: ExperimentConfig, noise: NoiseModel, rows: Vec<TrialRow>) -> Result<Self, SimError> {
        let l2: Vec<f64> = rows.iter().map(|r| r.l2_mm).collect();
        let rot: Vec<f64> = rows.iter().map(|r| r.rotation_deg).collect();
        let diffs: Vec<Vector3<f64>> = rows.iter().map(|r| Vector3::from(r.error_mm)).collect();
        let table = MisalignmentReport::from_differences(&diffs, AxisErrorMode::Absolute).map_err(|_| SimError::EmptyReport)?;
        Ok(Self {
            label: SIMULATED_LABEL.into(),
            config,
            noise,
            translation_l2: ErrorStatistics::of(&l2).ok_or(SimError::EmptyReport)?,
            rotation_deg: ErrorStatistics::of(&rot).ok_or(SimError::EmptyReport)?,
            table,
            rows,
        })
    }

    pub fn l2_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.l2_mm).collect()
    }

    pub fn rotation_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rotation_deg).collect()
    }

    pub fn condition(&self) -> String {
        format!("views={} avg_n={}", self.config.views, self.config.average_n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Random stream for one trial: seeded by the experiment seed, with the
/// trial index selecting an independent ChaCha stream.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn run_trial(cfg: &ExperimentConfig, noise: &NoiseModel, trial: usize) -> Result<TrialRow, SimError> {
    let mut rng = trial_rng(cfg.seed, trial);
    let views = &cfg.observers[..cfg.views];
    let samples = (0..cfg.average_n)
        .map(|_| sample_user_alignment(&cfg.truth, views, noise, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let estimate = transform_mean(&samples)?;
    let error = estimate.translation - cfg.truth.translation;
    Ok(TrialRow {
        trial,
        error_mm: error.into(),
        l2_mm: error.norm(),
        rotation_deg: geodesic_distance(&estimate.rotation, &cfg.truth.rotation).to_degrees(),
    })
}

pub fn run_alignment_experiment(cfg: &ExperimentConfig, noise: &NoiseModel) -> Result<ExperimentReport, SimError> {
    run_alignment_experiment_with(cfg, noise, Execution::default())
}

/// Serial and parallel execution produce identical rows.
pub fn run_alignment_experiment_with(
    cfg: &ExperimentConfig,
    noise: &NoiseModel,
    execution: Execution,
) -> Result<ExperimentReport, SimError> {
    cfg.validate()?;
    noise.validate()?;
    let rows = match execution {
        Execution::Serial => (0..cfg.trials).map(|t| run_trial(cfg, noise, t)).collect::<Result<Vec<_>, _>>()?,
        Execution::Parallel => (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, noise, t)).collect::<Result<Vec<_>, _>>()?,
    };
    ExperimentReport::from_rows(cfg.clone(), *noise, rows)
}

const SUMMARY_HEADER: [&str; 22] = [
    "label",
    "views",
    "average_n",
    "trials",
    "seed",
    "x_mean_mm",
    "x_std_mm",
    "y_mean_mm",
    "y_std_mm",
    "z_mean_mm",
    "z_std_mm",
    "l2_mean_mm",
    "l2_std_mm",
    "trial_l2_mean_mm",
    "trial_l2_std_mm",
    "trial_l2_median_mm",
    "trial_l2_p05_mm",
    "trial_l2_p95_mm",
    "rotation_mean_deg",
    "rotation_std_deg",
    "rotation_median_deg",
    "rotation_p95_deg",
];

fn csv_error(e: impl std::fmt::Display) -> SimError {
    SimError::Io(e.to_string())
}

/// One row per condition, per-axis columns laid out as mean/std pairs
/// followed by the norms of the mean and std vectors.
pub fn summary_csv(reports: &[ExperimentReport]) -> Result<String, SimError> {
    if reports.is_empty() || reports.iter().any(|r| r.rows.is_empty()) {
        return Err(SimError::EmptyReport);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).map_err(csv_error)?;
    for r in reports {
        let t = &r.table;
        let l2 = &r.translation_l2;
        let rot = &r.rotation_deg;
        let mut record = vec![
            r.label.clone(),
            r.config.views.to_string(),
            r.config.average_n.to_string(),
            r.rows.len().to_string(),
            r.config.seed.to_string(),
        ];
        record.extend(
            [
                t.mean_mm[0],
                t.std_mm[0],
                t.mean_mm[1],
                t.std_mm[1],
                t.mean_mm[2],
                t.std_mm[2],
                t.mean_norm_mm,
                t.std_norm_mm,
                l2.summary.mean,
                l2.summary.std,
                l2.summary.median,
                l2.p05,
                l2.p95,
                rot.summary.mean,
                rot.summary.std,
                rot.summary.median,
                rot.p95,
            ]
            .iter()
            .map(f64::to_string),
        );
        w.write_record(&record).map_err(csv_error)?;
    }
    String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)
}

pub fn trials_csv(reports: &[ExperimentReport]) -> Result<String, SimError> {
    if reports.is_empty() || reports.iter().any(|r| r.rows.is_empty()) {
        return Err(SimError::EmptyReport);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["views", "average_n", "trial", "dx_mm", "dy_mm", "dz_mm", "l2_mm", "rotation_deg"])
        .map_err(csv_error)?;
    for r in reports {
        for row in &r.rows {
            let mut record = vec![r.config.views.to_string(), r.config.average_n.to_string(), row.trial.to_string()];
            record.extend(row.error_mm.iter().chain([&row.l2_mm, &row.rotation_deg]).map(f64::to_string));
            w.write_record(&record).map_err(csv_error)?;
        }
    }
    String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)
}

pub fn summary_json(reports: &[ExperimentReport]) -> Result<String, SimError> {
    if reports.is_empty() || reports.iter().any(|r| r.rows.is_empty()) {
        return Err(SimError::EmptyReport);
    }
    #[derive(Serialize)]
    struct Condition<'a> {
        label: &'a str,
        config: &'a ExperimentConfig,
        noise: &'a NoiseModel,
        translation_l2: &'a ErrorStatistics,
        rotation_deg: &'a ErrorStatistics,
        table: &'a MisalignmentReport,
    }
    let conditions: Vec<Condition> = reports
        .iter()
        .map(|r| Condition {
            label: &r.label,
            config: &r.config,
            noise: &r.noise,
            translation_l2: &r.translation_l2,
            rotation_deg: &r.rotation_deg,
            table: &r.table,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&serde_json::json!({ "label": SIMULATED_LABEL, "conditions": conditions }))
        .expect("summary serializes");
    text.push('\n');
    Ok(text)
}

/// Writes `summary.csv`, `summary.json` and `trials.csv` into `dir`.
pub fn emit_report(reports: &[ExperimentReport], dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    let files = [
        ("summary.csv", summary_csv(reports)?),
        ("summary.json", summary_json(reports)?),
        ("trials.csv", trials_csv(reports)?),
    ];
    std::fs::create_dir_all(dir).map_err(|e| SimError::Io(format!("{}: {e}", dir.display())))?;
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, paired_bootstrap, population_std};

    fn cfg(trials: usize, views: usize, n: usize) -> ExperimentConfig {
        ExperimentConfig { trials, ..ExperimentConfig::default() }.with_condition(views, n)
    }

    #[test]
    fn zero_noise_returns_truth() {
        let c = ExperimentConfig::default();
        let mut rng = trial_rng(1, 0);
        for m in 1..=3 {
            let t = sample_user_alignment(&c.truth, &c.observers[..m], &NoiseModel::zero(), &mut rng).unwrap();
            assert_eq!(t, c.truth);
        }
        let r = run_alignment_experiment(&cfg(1, 1, 1), &NoiseModel::zero()).unwrap();
        assert_eq!(r.translation_l2.summary.max, 0.0);
        assert_eq!(r.rotation_deg.summary.max, 0.0);
        assert_eq!(r.table, MisalignmentReport::zero(1));
        let r = run_alignment_experiment(&cfg(20, 3, 3), &NoiseModel::zero()).unwrap();
        assert!(r.rows.iter().all(|row| row.l2_mm == 0.0 && row.rotation_deg == 0.0));
    }

    #[test]
    fn no_views_is_an_error() {
        let mut rng = trial_rng(1, 0);
        let truth = RigidTransform::identity();
        assert_eq!(sample_user_alignment(&truth, &[], &NoiseModel::default(), &mut rng), Err(SimError::NoViews));
        assert_eq!(run_alignment_experiment(&cfg(5, 0, 1), &NoiseModel::default()).unwrap_err(), SimError::NoViews);
    }

    #[test]
    fn single_view_depth_spread_is_k_times_lateral() {
        let view = [ObserverPose::look_at(&Vector3::new(0.0, 0.0, -1500.0), &Vector3::zeros(), &Vector3::y())];
        let truth = RigidTransform::identity();
        let noise = NoiseModel::default();
        let mut rng = trial_rng(42, 0);
        let errs: Vec<Vector3<f64>> =
            (0..10_000).map(|_| sample_user_alignment(&truth, &view, &noise, &mut rng).unwrap().translation).collect();
        let sx = population_std(&errs.iter().map(|e| e.x).collect::<Vec<_>>());
        let sz = population_std(&errs.iter().map(|e| e.z).collect::<Vec<_>>());
        assert!((sz / sx - 3.0).abs() < 0.3, "ratio {}", sz / sx);
    }

    #[test]
    fn two_orthogonal_views_cut_median_error() {
        let noise = NoiseModel::default();
        let one = run_alignment_experiment(&cfg(1000, 1, 1), &noise).unwrap();
        let two = run_alignment_experiment(&cfg(1000, 2, 1), &noise).unwrap();
        let reduction = 1.0 - two.translation_l2.summary.median / one.translation_l2.summary.median;
        assert!(reduction > 0.30, "median reduction {reduction}");
    }

    #[test]
    fn serial_and_parallel_agree() {
        let c = cfg(64, 2, 3);
        let a = run_alignment_experiment_with(&c, &NoiseModel::default(), Execution::Serial).unwrap();
        let b = run_alignment_experiment_with(&c, &NoiseModel::default(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn statistics_recompute_from_rows() {
        let r = run_alignment_experiment(&cfg(200, 2, 2), &NoiseModel::default()).unwrap();
        let l2 = r.l2_errors();
        assert!((mean(&l2) - r.translation_l2.summary.mean).abs() < 1e-9);
        assert!((population_std(&l2) - r.translation_l2.summary.std).abs() < 1e-9);
        let x: Vec<f64> = r.rows.iter().map(|row| row.error_mm[0].abs()).collect();
        assert!((mean(&x) - r.table.mean_mm[0]).abs() < 1e-9);
        let norm = Vector3::from(r.table.mean_mm).norm();
        assert!((norm - r.table.mean_norm_mm).abs() < 1e-12);
        for row in &r.rows {
            assert!((Vector3::from(row.error_mm).norm() - row.l2_mm).abs() < 1e-12);
        }
    }

    /// Upper bound of the 95% paired-bootstrap interval for
    /// `mean(b) - mean(a)`.
    fn increase_upper_bound(a: &[f64], b: &[f64]) -> f64 {
        paired_bootstrap(a, b, |x, y| mean(y) - mean(x), 2000, 0.95, 7).upper
    }

    #[test]
    fn error_shrinks_with_more_views() {
        let noise = NoiseModel::default();
        let runs: Vec<Vec<f64>> =
            (1..=3).map(|m| run_alignment_experiment(&cfg(1000, m, 1), &noise).unwrap().l2_errors()).collect();
        for w in runs.windows(2) {
            assert!(increase_upper_bound(&w[0], &w[1]) < 0.0);
        }
    }

    #[test]
    fn error_shrinks_with_more_averaging() {
        let noise = NoiseModel::default();
        let runs: Vec<Vec<f64>> =
            [1, 2, 3, 5].iter().map(|&n| run_alignment_experiment(&cfg(1000, 1, n), &noise).unwrap().l2_errors()).collect();
        for w in runs.windows(2) {
            assert!(increase_upper_bound(&w[0], &w[1]) < 0.0);
        }
    }

    #[test]
    fn empty_report_is_rejected() {
        let mut r = run_alignment_experiment(&cfg(2, 1, 1), &NoiseModel::default()).unwrap();
        r.rows.clear();
        assert_eq!(summary_csv(&[r.clone()]), Err(SimError::EmptyReport));
        assert_eq!(summary_csv(&[]), Err(SimError::EmptyReport));
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(emit_report(&[r], dir.path()), Err(SimError::EmptyReport));
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
        assert_eq!(
            ExperimentReport::from_rows(cfg(1, 1, 1), NoiseModel::default(), vec![]),
            Err(SimError::EmptyReport)
        );
    }

    #[test]
    fn invalid_inputs() {
        let bad = NoiseModel { depth_factor: 0.5, ..NoiseModel::default() };
        assert!(matches!(bad.validate(), Err(SimError::InvalidNoise(_))));
        assert!(matches!(cfg(0, 1, 1).validate(), Err(SimError::InvalidConfig(_))));
        assert!(matches!(cfg(1, 4, 1).validate(), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn experiment_file_roundtrip() {
        let file = ExperimentFile::new(cfg(10, 2, 3), NoiseModel::default());
        let back = ExperimentFile::from_json(&file.to_json()).unwrap();
        assert_eq!(back, file);
        let minimal = file.to_json().replace(",\n  \"noise\"", ",\n  \"unused\"");
        assert_eq!(ExperimentFile::from_json(&minimal).unwrap().noise, NoiseModel::default());
    }
}
