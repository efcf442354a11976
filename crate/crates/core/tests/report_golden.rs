use std::path::PathBuf;

use realign_core::sim::{emit_report, run_alignment_experiment, ExperimentConfig, ExperimentReport, NoiseModel};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report")
}

fn fixture_reports() -> Vec<ExperimentReport> {
    let base = ExperimentConfig { trials: 6, seed: 7, ..ExperimentConfig::default() };
    [(1, 1), (2, 3)]
        .iter()
        .map(|&(m, n)| run_alignment_experiment(&base.with_condition(m, n), &NoiseModel::default()).unwrap())
        .collect()
}

/// Set `REALIGN_UPDATE_GOLDEN=1` to rewrite the snapshot.
#[test]
fn emitted_report_matches_snapshot() {
    let out = tempfile::tempdir().unwrap();
    let written = emit_report(&fixture_reports(), out.path()).unwrap();
    assert_eq!(written.len(), 3);
    if std::env::var_os("REALIGN_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        for path in &written {
            std::fs::copy(path, golden_dir().join(path.file_name().unwrap())).unwrap();
        }
    }
    for path in &written {
        let name = path.file_name().unwrap();
        let golden = std::fs::read(golden_dir().join(name)).unwrap();
        assert!(std::fs::read(path).unwrap() == golden, "{name:?} differs from snapshot");
    }
}

#[test]
fn summary_l2_columns_are_norms_of_axis_columns() {
    let csv = realign_core::sim::summary_csv(&fixture_reports()).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let v = |name: &str| cells[col(name)].parse::<f64>().unwrap();
        assert_eq!(cells[col("label")], "simulated");
        let mean = nalgebra::Vector3::new(v("x_mean_mm"), v("y_mean_mm"), v("z_mean_mm")).norm();
        let std = nalgebra::Vector3::new(v("x_std_mm"), v("y_std_mm"), v("z_std_mm")).norm();
        assert!((mean - v("l2_mean_mm")).abs() < 1e-12);
        assert!((std - v("l2_std_mm")).abs() < 1e-12);
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (x, y) in emit_report(&fixture_reports(), a.path()).unwrap().iter().zip(emit_report(&fixture_reports(), b.path()).unwrap()) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}
