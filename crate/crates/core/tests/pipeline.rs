use std::path::Path;
use std::process::Command;

use rollscan::config::{BaselineMode, ControlMode, ExperimentConfig};
use rollscan::environment::{build_scene, SceneKind};
use rollscan::harness::{read_reports, simulate, RateCounts};

#[test]
fn corridor_voxels_match_golden_count() {
    let golden: usize = include_str!("data/corridor_voxels_0.1.txt").trim().parse().unwrap();
    let grid = build_scene(SceneKind::Corridor).reference_voxels(0.1);
    assert_eq!(grid.len(), golden);

    // Floor and ceiling cover 200 x 20 cells. Each wall layer holds two 200-cell side
    // walls and two 20-cell end walls; the y = -1 wall shares a corner cell with the
    // x = -10 end wall, and on the floor layer only the y = +1 and x = +10 walls fall
    // outside the floor's cells.
    let floor = 200 * 20;
    let wall_layer = 2 * 200 + 2 * 20 - 1;
    let oracle = (floor + 200 + 20) + 24 * wall_layer + floor;
    assert_eq!(golden, oracle);
}

#[test]
fn sixty_second_run_honours_rate_contract() {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.baseline = BaselineMode::FixedHorizontal;
    cfg.lidar.rays_per_frame = 100;
    let r = simulate(&cfg, 0).unwrap().report;
    assert_eq!(r.counts, RateCounts { physics: 60_000, control: 6_000, imu: 12_000, lidar: 600 });
}

#[test]
fn estimator_in_loop_tracks_in_the_lab() {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.kind = SceneKind::Lab;
    cfg.experiment.baseline = BaselineMode::FixedHorizontal;
    cfg.experiment.control = ControlMode::EstimatorInLoop;
    cfg.experiment.duration = 20.0;
    let out = simulate(&cfg, 0).unwrap();
    let worst = out.trajectory.iter().map(|r| (r.estimate - r.truth).norm()).fold(0.0, f64::max);
    assert!(worst < 0.15, "estimate drifted {worst} m from truth");
    assert!(out.report.mean_tracking_error < 0.15);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rollscan")).args(args).output().expect("binary runs")
}

fn run_short(out: &Path, mode: &str) {
    let o = cli(&[
        "run",
        "--mode",
        mode,
        "--seed",
        "7",
        "--repeats",
        "2",
        "--set",
        "experiment.duration=2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn cli_run_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_short(&a, "passive_excitation");
    run_short(&b, "passive_excitation");

    let trajectory = std::fs::read_to_string(a.join("repeat_0/trajectory.csv")).unwrap();
    assert_eq!(trajectory.lines().next().unwrap(), "t,ref_x,ref_y,true_x,true_y,est_x,est_y,err_m");
    let ply = std::fs::read_to_string(a.join("repeat_1/map.ply")).unwrap();
    assert!(ply.starts_with("ply\nformat ascii 1.0\n"));

    let reports = read_reports(&a.join("report.csv")).unwrap();
    assert_eq!(reports.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![7, 8]);
    assert_eq!(reports[0].config_hash, reports[1].config_hash);

    // config.toml records the output directory, so it is the one file allowed to differ.
    for f in ["report.csv", "summary.txt", "repeat_0/trajectory.csv", "repeat_1/map.ply", "repeat_1/estimate.csv"] {
        assert!(std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn cli_compare_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("fixed"), dir.path().join("passive"));
    run_short(&a, "fixed_horizontal");
    run_short(&b, "passive_excitation");
    let o = cli(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("fixed_horizontal") && table.contains("passive_excitation"));
    assert!(dir.path().join("comparison.txt").exists());

    let o = cli(&["run", "--set", "lidar.no_such_key=1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    let o = cli(&["run", "--set", "experiment.tilt_deg=45"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment.tilt_deg"));
}

#[test]
fn cli_sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "sweep",
        "--set",
        "experiment.duration=1",
        "--param",
        "oscillation.amplitude",
        "--values",
        "0,2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(dir.path().join("oscillation.amplitude=2/repeat_0/trajectory.csv").exists());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}
