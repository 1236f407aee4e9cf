//! Closed-loop experiment runner: physics at 1 kHz, control at 100 Hz, IMU and
//! LiDAR at their configured rates, followed by metric evaluation and report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, UnitQuaternion, Vector2};
use rayon::prelude::*;

use crate::config::{BaselineMode, ControlMode, ExperimentConfig};
use crate::control::{
    shape_oscillation, twist_to_wheels, EstimateBridge, Pose2, ReferenceTrajectory, TrackingController, TrajectoryKind,
};
use crate::dynamics::{step, AttitudeMode, SimState, WheelCommand};
use crate::environment::{SceneKind, VoxelGrid};
use crate::error::{Error, Result};
use crate::estimator::{lio_update, preintegrate, ImuNoise, LocalMap, MapParams, RobotState};
use crate::geometry::{log_so3, rot_y, rot_z, Frame, RigidTransform, Vec3};
use crate::metrics::{
    completeness, mean_tracking_error, per_lap_means, Conditioning, ElevationHistogram, NearGround, NEAR_GROUND_HEIGHT,
    NEAR_GROUND_RADIUS,
};
use crate::sensors::{derived_rng, lidar_pose, simulate_imu, simulate_scan, write_ply, ImuBias, ImuParams, ImuSample, STREAM_IMU, STREAM_LIDAR};

pub const PHYSICS_RATE: u64 = 1000;
pub const CONTROL_RATE: u64 = 100;
const PHYSICS_DT: f64 = 1.0 / PHYSICS_RATE as f64;
const CONTROL_DT: f64 = 1.0 / CONTROL_RATE as f64;

/// Number of events of each kind in one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RateCounts {
    pub physics: u64,
    pub control: u64,
    pub imu: u64,
    pub lidar: u64,
}

/// One control-tick sample of the executed trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub reference: Vector2<f64>,
    pub truth: Vec3,
    pub estimate: Vec3,
}

impl TrajectoryRow {
    pub fn error(&self) -> f64 {
        (self.truth.xy() - self.reference).norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub baseline: BaselineMode,
    pub control: ControlMode,
    pub scene: SceneKind,
    pub trajectory: TrajectoryKind,
    pub repeat: u32,
    pub seed: u64,
    pub config_hash: String,
    pub completeness: f64,
    pub mean_tracking_error: f64,
    pub near_ground_fraction: f64,
    pub elevation_entropy: f64,
    /// Mean over frames of the smallest eigenvalue of the registration normal matrix.
    pub registration_min_eigenvalue: f64,
    pub per_lap_errors: Vec<f64>,
    pub degraded_frames: u64,
    pub weak_frames: u64,
    pub counts: RateCounts,
}

/// Everything one repeat produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub trajectory: Vec<TrajectoryRow>,
    pub estimates: Vec<EstimateRow>,
    /// Occupied voxels of the accumulated map.
    pub map: VoxelGrid,
    pub final_state: SimState,
}

/// Estimator output at one LiDAR frame, next to the true pose.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub estimate: RigidTransform,
    pub truth: RigidTransform,
    pub degraded: bool,
    pub weak_direction: bool,
    pub correspondences: usize,
    pub iterations: usize,
}

/// IMU sample covering the interval from `start` to `end`, stamped at its start. The
/// gyro reads the mean body rate and the accelerometer the mean specific force in the
/// start attitude, as an IMU averaging over its sample period would.
fn interval_imu(start: &SimState, end: &SimState, gravity: &Vec3, bias: &ImuBias, params: &ImuParams, rng: &mut impl rand::Rng) -> ImuSample {
    let dt = end.time - start.time;
    let mut view = start.clone();
    view.omega = log_so3(&(start.pose.rotation.transpose() * end.pose.rotation)) / dt;
    let accel = (end.velocity - start.velocity) / dt;
    simulate_imu(&view, &accel, gravity, bias, params, rng)
}

fn divider(rate: f64, field: &str) -> Result<u64> {
    let d = PHYSICS_RATE as f64 / rate;
    let r = d.round();
    if r < 1.0 || (d - r).abs() > 1e-9 {
        return Err(Error::invalid(field, format!("{rate} Hz does not divide the {PHYSICS_RATE} Hz physics rate")));
    }
    Ok(r as u64)
}

/// Mount transform T_OL at time `t` for the configured baseline.
pub fn mount_at(cfg: &ExperimentConfig, t: f64) -> RigidTransform {
    let base = cfg.lidar.mount();
    let e = &cfg.experiment;
    let extra = match e.baseline {
        BaselineMode::FixedHorizontal | BaselineMode::PassiveExcitation => return base,
        BaselineMode::StaticTilt => rot_y(e.tilt_deg.to_radians()),
        BaselineMode::ActiveRotation => rot_z(std::f64::consts::TAU * e.rotation_rate * t) * rot_y(e.rotation_tilt_deg.to_radians()),
    };
    RigidTransform::new(base.rotation * extra, base.translation, Frame::Lidar, Frame::Shell)
}

fn run_context(cfg: &ExperimentConfig, repeat: u32) -> String {
    format!("{} on {:?}, repeat {repeat}", cfg.experiment.baseline, cfg.scene.kind)
}

/// Simulates one repeat with seed `experiment.seed + repeat`.
pub fn simulate(cfg: &ExperimentConfig, repeat: u32) -> Result<RunOutcome> {
    simulate_inner(cfg, repeat).map_err(|e| Error::Run { context: run_context(cfg, repeat), source: Box::new(e) })
}

fn simulate_inner(cfg: &ExperimentConfig, repeat: u32) -> Result<RunOutcome> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let seed = e.seed.wrapping_add(repeat as u64);
    let scene = cfg.build_scene()?;
    let reference = ReferenceTrajectory::new(cfg.trajectory.clone())?;
    let vehicle = &cfg.vehicle;
    let gravity = vehicle.shell.gravity_world();
    let imu_div = divider(cfg.imu.rate, "imu.rate")?;
    let lidar_div = divider(cfg.lidar.frame_rate, "lidar.frame_rate")?;
    let control_div = PHYSICS_RATE / CONTROL_RATE;
    let ticks = (e.duration * PHYSICS_RATE as f64).round() as u64;

    let passive = e.baseline == BaselineMode::PassiveExcitation;
    let attitude = if passive { AttitudeMode::Dynamic } else { AttitudeMode::FrozenLevel };
    let mut oscillation = cfg.oscillation.clone();
    oscillation.enabled &= passive;
    let true_bias = ImuBias::from(&cfg.imu);
    let noise = ImuNoise { gyro: cfg.imu.gyro_noise, accel: cfg.imu.accel_noise };

    let start = reference.state(0.0);
    let mut state = SimState::at_rest(start.position.x, start.position.y, start.heading, vehicle, &scene);
    let mut controller = TrackingController::new(cfg.controller.clone());
    let mut bridge = EstimateBridge::new(cfg.controller.bridge);
    let mut command = WheelCommand::default();

    let mut estimate = RobotState { p: state.pose.translation, v: Vec3::zeros(), r: state.pose.rotation, bias: ImuBias::default(), t: 0.0 };
    let mut local_map = LocalMap::new(MapParams { resolution: cfg.estimator.map_resolution, ..MapParams::default() });
    let mut imu_buffer: Vec<ImuSample> = Vec::new();
    let mut imu_start = state.clone();

    let mut map = VoxelGrid::new(e.map_resolution);
    let mut near_ground = NearGround::default();
    let mut elevations = ElevationHistogram::default();
    let mut conditioning = Conditioning::default();
    let mut counts = RateCounts::default();
    let mut degraded_frames = 0;
    let mut weak_frames = 0;
    let mut rows = Vec::with_capacity((ticks / control_div + 1) as usize);
    let mut estimates = Vec::with_capacity((ticks / lidar_div + 1) as usize);

    for n in 0..ticks {
        let t = n as f64 * PHYSICS_DT;

        if n % lidar_div == 0 {
            let frame = counts.lidar;
            let mount = mount_at(cfg, t);
            let t_wl = lidar_pose(&state.pose, &mount)?;
            let scan = simulate_scan(&t_wl, t, frame, &mount, &scene, &cfg.lidar, &mut derived_rng(seed, STREAM_LIDAR, frame))?;
            let world: Vec<Vec3> = scan.points.iter().map(|p| t_wl.apply(p)).collect();
            near_ground.add(&t_wl.translation, &world, NEAR_GROUND_HEIGHT, NEAR_GROUND_RADIUS);
            elevations.add_scan(&scan);
            conditioning.add_scan(&scan);

            let mut row = EstimateRow { t, estimate: estimate.pose(), truth: state.pose, degraded: false, weak_direction: false, correspondences: 0, iterations: 0 };
            if frame > 0 && !imu_buffer.is_empty() {
                let preint = preintegrate(&imu_buffer, &estimate.bias, &noise, t)?;
                let outcome = lio_update(&estimate, &preint, &scan.points, &mount, &local_map, &gravity, &cfg.estimator);
                degraded_frames += outcome.degraded as u64;
                weak_frames += outcome.weak_direction as u64;
                estimate = outcome.state;
                estimate.t = t;
                row = EstimateRow {
                    estimate: estimate.pose(),
                    degraded: outcome.degraded,
                    weak_direction: outcome.weak_direction,
                    correspondences: outcome.correspondences,
                    iterations: outcome.iterations,
                    ..row
                };
            }
            estimates.push(row);
            imu_buffer.clear();
            let est_wl = estimate.pose().compose(&mount)?;
            local_map.insert_scan(&scan.points, &est_wl);
            bridge.push(t, Pose2::from_transform(&estimate.pose()));
            match e.control {
                ControlMode::GroundTruth => map.extend(&world),
                ControlMode::EstimatorInLoop => map.extend(&scan.points.iter().map(|p| est_wl.apply(p)).collect::<Vec<_>>()),
            }
            counts.lidar += 1;
        }

        if n % control_div == 0 {
            let target = reference.state(t);
            let current = match e.control {
                ControlMode::GroundTruth => Some(Pose2::from_transform(&state.pose)),
                ControlMode::EstimatorInLoop => bridge.at(t),
            };
            command = match current {
                Some(pose) => {
                    let (v, w) = controller.step(&target, &pose, CONTROL_DT);
                    let nominal = twist_to_wheels(v, w, &vehicle.drive);
                    shape_oscillation(nominal, t, &oscillation, vehicle.drive.max_wheel_speed)
                }
                None => WheelCommand::default(),
            };
            let est = bridge.at(t).map_or(state.pose.translation, |p| Vec3::new(p.x, p.y, estimate.p.z));
            rows.push(TrajectoryRow { t, reference: target.position, truth: state.pose.translation, estimate: est });
            counts.control += 1;
        }

        state = step(&state, command, PHYSICS_DT, vehicle, &scene, attitude)?;
        counts.physics += 1;

        if (n + 1) % imu_div == 0 {
            let mut rng = derived_rng(seed, STREAM_IMU, counts.imu);
            imu_buffer.push(interval_imu(&imu_start, &state, &gravity, &true_bias, &cfg.imu, &mut rng));
            imu_start = state.clone();
            counts.imu += 1;
        }
    }

    let executed: Vec<(f64, Vector2<f64>)> = rows.iter().map(|r| (r.t, r.truth.xy())).collect();
    let errors: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.error())).collect();
    let reference_voxels = scene.reference_voxels(e.map_resolution);
    let report = RunReport {
        baseline: e.baseline,
        control: e.control,
        scene: cfg.scene.kind,
        trajectory: cfg.trajectory.kind,
        repeat,
        seed,
        config_hash: cfg.hash(),
        completeness: completeness(&reference_voxels, &map)?,
        mean_tracking_error: mean_tracking_error(&executed, &reference)?,
        near_ground_fraction: near_ground.fraction(),
        elevation_entropy: elevations.entropy(),
        registration_min_eigenvalue: conditioning.mean(),
        per_lap_errors: per_lap_means(&errors, reference.lap_time()),
        degraded_frames,
        weak_frames,
        counts,
    };
    Ok(RunOutcome { report, trajectory: rows, estimates, map, final_state: state })
}

/// Runs every repeat (in parallel) and writes the artifacts under `experiment.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunReport>> {
    let outcomes: Vec<RunOutcome> =
        (0..cfg.experiment.repeats).into_par_iter().map(|k| simulate(cfg, k)).collect::<Result<Vec<_>>>()?;
    let out = &cfg.experiment.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    for o in &outcomes {
        write_run(&repeat_dir(out, o.report.repeat), cfg, o)?;
    }
    let reports: Vec<RunReport> = outcomes.into_iter().map(|o| o.report).collect();
    write_reports(&out.join("report.csv"), &reports)?;
    std::fs::write(out.join("summary.txt"), summary_text(cfg, &reports))?;
    Ok(reports)
}

/// Writes `trajectory.csv`, `map.ply`, `report.csv`, and `summary.txt` for one repeat.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trajectory(&dir.join("trajectory.csv"), &outcome.trajectory)?;
    write_estimates(&dir.join("estimate.csv"), &outcome.estimates)?;
    let centers: Vec<Vec3> = outcome.map.sorted().iter().map(|i| outcome.map.center(i)).collect();
    write_ply(&dir.join("map.ply"), &centers)?;
    write_reports(&dir.join("report.csv"), std::slice::from_ref(&outcome.report))?;
    std::fs::write(dir.join("summary.txt"), summary_text(cfg, std::slice::from_ref(&outcome.report)))?;
    Ok(())
}

/// Estimated shell poses as `t,px,py,pz,qw,qx,qy,qz`.
pub fn write_estimates(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,px,py,pz,qw,qx,qy,qz")?;
    for r in rows {
        let p = &r.estimate.translation;
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r.estimate.rotation));
        writeln!(w, "{:.3},{:.6},{:.6},{:.6},{:.9},{:.9},{:.9},{:.9}", r.t, p.x, p.y, p.z, q.w, q.i, q.j, q.k)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,ref_x,ref_y,true_x,true_y,est_x,est_y,err_m")?;
    for r in rows {
        writeln!(
            w,
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.t,
            r.reference.x,
            r.reference.y,
            r.truth.x,
            r.truth.y,
            r.estimate.x,
            r.estimate.y,
            r.error()
        )?;
    }
    w.flush()?;
    Ok(())
}

pub const REPORT_HEADER: &str = "baseline,control,scene,trajectory,repeat,seed,config_hash,completeness,mean_tracking_error_m,\
near_ground_fraction,elevation_entropy_bits,registration_min_eigenvalue,degraded_frames,weak_frames,physics_ticks,\
control_ticks,imu_samples,lidar_frames,per_lap_errors_m";

fn scene_name(s: SceneKind) -> &'static str {
    match s {
        SceneKind::Lab => "lab",
        SceneKind::Corridor => "corridor",
        SceneKind::Tactical => "tactical",
    }
}

fn trajectory_name(k: TrajectoryKind) -> &'static str {
    match k {
        TrajectoryKind::Figure8 => "figure8",
        TrajectoryKind::Circle => "circle",
        TrajectoryKind::Oval => "oval",
        TrajectoryKind::Line => "line",
    }
}

pub fn report_row(r: &RunReport) -> String {
    let laps: Vec<String> = r.per_lap_errors.iter().map(|e| format!("{e:.6}")).collect();
    format!(
        "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{},{}",
        r.baseline,
        r.control.name(),
        scene_name(r.scene),
        trajectory_name(r.trajectory),
        r.repeat,
        r.seed,
        r.config_hash,
        r.completeness,
        r.mean_tracking_error,
        r.near_ground_fraction,
        r.elevation_entropy,
        r.registration_min_eigenvalue,
        r.degraded_frames,
        r.weak_frames,
        r.counts.physics,
        r.counts.control,
        r.counts.imu,
        r.counts.lidar,
        laps.join(";")
    )
}

pub fn write_reports(path: &Path, reports: &[RunReport]) -> Result<()> {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for r in reports {
        text.push_str(&report_row(r));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses a file written by [`write_reports`].
pub fn read_reports(path: &Path) -> Result<Vec<RunReport>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, what: &str| Error::Config(format!("{}:{line}: {what}", path.display()));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == REPORT_HEADER => {}
        _ => return Err(bad(1, "unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 19 {
            return Err(bad(i + 1, "wrong column count"));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        let int = |k: usize| f[k].parse::<u64>().map_err(|_| bad(i + 1, "bad integer"));
        let control = f[1].parse::<ControlMode>()?;
        out.push(RunReport {
            baseline: f[0].parse()?,
            control,
            scene: f[2].parse()?,
            trajectory: f[3].parse()?,
            repeat: int(4)? as u32,
            seed: int(5)?,
            config_hash: f[6].to_string(),
            completeness: num(7)?,
            mean_tracking_error: num(8)?,
            near_ground_fraction: num(9)?,
            elevation_entropy: num(10)?,
            registration_min_eigenvalue: num(11)?,
            degraded_frames: int(12)?,
            weak_frames: int(13)?,
            counts: RateCounts { physics: int(14)?, control: int(15)?, imu: int(16)?, lidar: int(17)? },
            per_lap_errors: if f[18].is_empty() {
                Vec::new()
            } else {
                f[18].split(';').map(|s| s.parse::<f64>().map_err(|_| bad(i + 1, "bad lap error"))).collect::<Result<_>>()?
            },
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub spread: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let spread = if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, spread }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub baseline: BaselineMode,
    pub repeats: usize,
    pub completeness: Stat,
    pub tracking_error: Stat,
    pub near_ground_fraction: Stat,
    pub elevation_entropy: Stat,
    pub registration_min_eigenvalue: Stat,
}

/// Per-baseline table, ordered by mean completeness (highest first).
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub scene: SceneKind,
    pub trajectory: TrajectoryKind,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(reports: &[RunReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::MismatchedReports(format!("need at least two reports, got {}", reports.len())));
    }
    let first = &reports[0];
    for r in reports {
        if r.scene != first.scene || r.trajectory != first.trajectory {
            return Err(Error::MismatchedReports(format!(
                "{}/{} vs {}/{}",
                scene_name(first.scene),
                trajectory_name(first.trajectory),
                scene_name(r.scene),
                trajectory_name(r.trajectory)
            )));
        }
    }
    let mut groups: BTreeMap<BaselineMode, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.baseline).or_default().push(r);
    }
    let mut rows: Vec<ComparisonRow> = groups
        .into_iter()
        .map(|(baseline, g)| {
            let stat = |f: fn(&RunReport) -> f64| Stat::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            ComparisonRow {
                baseline,
                repeats: g.len(),
                completeness: stat(|r| r.completeness),
                tracking_error: stat(|r| r.mean_tracking_error),
                near_ground_fraction: stat(|r| r.near_ground_fraction),
                elevation_entropy: stat(|r| r.elevation_entropy),
                registration_min_eigenvalue: stat(|r| r.registration_min_eigenvalue),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.completeness.mean.total_cmp(&a.completeness.mean).then(a.baseline.cmp(&b.baseline)));
    Ok(Comparison { scene: first.scene, trajectory: first.trajectory, rows })
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scene: {}  trajectory: {}", scene_name(self.scene), trajectory_name(self.trajectory));
        let _ = writeln!(
            s,
            "{:<20} {:>3}  {:>17}  {:>17}  {:>17}  {:>17}  {:>19}",
            "baseline", "n", "completeness", "tracking_err_m", "near_ground", "entropy_bits", "reg_min_eig"
        );
        let cell = |st: &Stat| format!("{:.4} ± {:.4}", st.mean, st.spread);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<20} {:>3}  {:>17}  {:>17}  {:>17}  {:>17}  {:>19}",
                r.baseline.name(),
                r.repeats,
                cell(&r.completeness),
                cell(&r.tracking_error),
                cell(&r.near_ground_fraction),
                cell(&r.elevation_entropy),
                format!("{:.2} ± {:.2}", r.registration_min_eigenvalue.mean, r.registration_min_eigenvalue.spread),
            );
        }
        s
    }
}

pub fn summary_text(cfg: &ExperimentConfig, reports: &[RunReport]) -> String {
    let e = &cfg.experiment;
    let mut s = String::new();
    let _ = writeln!(s, "baseline: {}", e.baseline);
    let _ = writeln!(s, "control: {}", e.control.name());
    let _ = writeln!(s, "scene: {}", scene_name(cfg.scene.kind));
    let _ = writeln!(s, "trajectory: {} at {} m/s", trajectory_name(cfg.trajectory.kind), cfg.trajectory.speed);
    let _ = writeln!(s, "duration: {} s, repeats: {}, base seed: {}", e.duration, e.repeats, e.seed);
    let _ = writeln!(s, "config hash: {}", cfg.hash());
    let _ = writeln!(s, "tracking error: mean time-indexed distance to the reference, sampled at the control rate");
    let pose_source = match e.control {
        ControlMode::GroundTruth => "true poses",
        ControlMode::EstimatorInLoop => "estimator poses",
    };
    let _ = writeln!(s, "map: occupied {} m voxels built from {pose_source}", e.map_resolution);
    let _ = writeln!(s);
    for r in reports {
        let _ = writeln!(
            s,
            "repeat {} (seed {}): completeness {:.4}, tracking error {:.4} m, near-ground {:.4}, entropy {:.3} bits, reg. min eigenvalue {:.2}, degraded frames {}/{}",
            r.repeat,
            r.seed,
            r.completeness,
            r.mean_tracking_error,
            r.near_ground_fraction,
            r.elevation_entropy,
            r.registration_min_eigenvalue,
            r.degraded_frames,
            r.counts.lidar
        );
    }
    if reports.len() > 1 {
        let st = |f: fn(&RunReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
        let c = st(|r| r.completeness);
        let t = st(|r| r.mean_tracking_error);
        let _ = writeln!(s, "mean: completeness {:.4} ± {:.4}, tracking error {:.4} ± {:.4} m", c.mean, c.spread, t.mean, t.spread);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "power, cost, and weight: out of scope (physical platform properties with no simulation analogue)");
    s
}

/// Runs the experiment once per value of a dotted config key. Each run writes to
/// `out/<key>=<value>`; a table of all runs is written to `out/sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig, key: &str, values: &[String]) -> Result<Vec<(String, Vec<RunReport>)>> {
    if values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    let base = &cfg.experiment.out;
    let mut results = Vec::new();
    let mut table = format!("{key},{REPORT_HEADER}\n");
    for value in values {
        let mut c = cfg.with_override(key, value)?;
        c.experiment.out = base.join(format!("{key}={value}"));
        let reports = run_experiment(&c)?;
        for r in &reports {
            let _ = writeln!(table, "{value},{}", report_row(r));
        }
        results.push((value.clone(), reports));
    }
    std::fs::create_dir_all(base)?;
    std::fs::write(base.join("sweep.csv"), table)?;
    Ok(results)
}

/// Output directory for repeat `k` of a run rooted at `out`.
pub fn repeat_dir(out: &Path, k: u32) -> PathBuf {
    out.join(format!("repeat_{k}"))
}
