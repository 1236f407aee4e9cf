//! Simulated LiDAR frames and IMU samples drawn from the true simulator state.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::SimState;
use crate::environment::Scene;
use crate::error::{Error, Result};
use crate::geometry::{rot_x, rot_y, rot_z, Frame, RigidTransform, Vec3};

/// Independent random stream for a (seed, purpose, index) triple.
pub fn derived_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"rollscan");
    ChaCha8Rng::from_seed(key)
}

pub const STREAM_LIDAR: u64 = 1;
pub const STREAM_IMU: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarParams {
    pub rays_per_frame: usize,
    pub frame_rate: f64,
    pub azimuth_fov_deg: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range: f64,
    /// Along-ray range noise σ_r (m).
    pub range_noise: f64,
    /// Returns whose incidence angle to the surface normal exceeds this are lost (deg).
    pub max_incidence_deg: f64,
    /// Mount translation p_OL (m).
    pub mount_translation: [f64; 3],
    /// Mount rotation as roll, pitch, yaw (deg), applied as Rz·Ry·Rx.
    pub mount_rpy_deg: [f64; 3],
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            rays_per_frame: 2000,
            frame_rate: 10.0,
            azimuth_fov_deg: 360.0,
            elevation_min_deg: -7.0,
            elevation_max_deg: 52.0,
            max_range: 40.0,
            range_noise: 0.02,
            max_incidence_deg: 80.0,
            mount_translation: [0.0, 0.0, 0.125],
            mount_rpy_deg: [0.0, 0.0, 0.0],
        }
    }
}

impl LidarParams {
    pub fn mount(&self) -> RigidTransform {
        let [r, p, y] = self.mount_rpy_deg.map(f64::to_radians);
        RigidTransform::new(rot_z(y) * rot_y(p) * rot_x(r), Vec3::from(self.mount_translation), Frame::Lidar, Frame::Shell)
    }

    pub fn validate(&self) -> Result<()> {
        let half = 90.0;
        if self.rays_per_frame == 0 {
            return Err(Error::invalid("lidar.rays_per_frame", "must be > 0"));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::invalid("lidar.frame_rate", "must be > 0"));
        }
        if !(self.azimuth_fov_deg > 0.0 && self.azimuth_fov_deg <= 360.0) {
            return Err(Error::invalid("lidar.azimuth_fov_deg", "must be in (0, 360]"));
        }
        let (lo, hi) = (self.elevation_min_deg, self.elevation_max_deg);
        if !(lo > -half && hi < half && lo < hi) {
            return Err(Error::invalid("lidar.elevation", "need -90 < min < max < 90 deg"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("lidar.max_range", "must be > 0"));
        }
        if !(self.range_noise >= 0.0) {
            return Err(Error::invalid("lidar.range_noise", "must be >= 0"));
        }
        if !(self.max_incidence_deg > 0.0 && self.max_incidence_deg <= 90.0) {
            return Err(Error::invalid("lidar.max_incidence_deg", "must be in (0, 90]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanFrame {
    pub timestamp: f64,
    pub frame_index: u64,
    /// Returns in the LiDAR frame (m).
    pub points: Vec<Vec3>,
    /// True T_WL, for evaluation only.
    pub true_pose: RigidTransform,
    /// World-frame normal of the surface each return came from, for evaluation only.
    pub normals: Vec<Vec3>,
    /// Mount T_OL the frame was taken with.
    pub mount: RigidTransform,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuParams {
    pub rate: f64,
    /// Gyro white noise σ_g (rad/s).
    pub gyro_noise: f64,
    /// Accelerometer white noise σ_a (m/s²).
    pub accel_noise: f64,
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
}

impl Default for ImuParams {
    fn default() -> Self {
        Self { rate: 200.0, gyro_noise: 0.01, accel_noise: 0.05, gyro_bias: [0.0; 3], accel_bias: [0.0; 3] }
    }
}

impl ImuParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(Error::invalid("imu.rate", "must be > 0"));
        }
        if !(self.gyro_noise >= 0.0 && self.accel_noise >= 0.0) {
            return Err(Error::invalid("imu.noise", "must be >= 0"));
        }
        Ok(())
    }
}

/// Gyro and accelerometer biases.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImuBias {
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl From<&ImuParams> for ImuBias {
    fn from(p: &ImuParams) -> Self {
        Self { gyro: Vec3::from(p.gyro_bias), accel: Vec3::from(p.accel_bias) }
    }
}

/// `T_WL = T_WO T_OL`.
pub fn lidar_pose(t_wo: &RigidTransform, t_ol: &RigidTransform) -> Result<RigidTransform> {
    t_wo.compose(t_ol)
}

const PLASTIC: f64 = 1.324_717_957_244_746;

/// Unit ray directions for one frame. Consecutive frames continue a single
/// two-dimensional low-discrepancy sequence, so no two frames repeat.
pub fn scan_pattern(frame_index: u64, params: &LidarParams) -> Vec<Vec3> {
    let n = params.rays_per_frame as u64;
    let (a1, a2) = (1.0 / PLASTIC, 1.0 / (PLASTIC * PLASTIC));
    let (s_lo, s_hi) = (params.elevation_min_deg.to_radians().sin(), params.elevation_max_deg.to_radians().sin());
    let fov = params.azimuth_fov_deg.to_radians();
    (0..n)
        .map(|j| {
            let i = frame_index.wrapping_mul(n).wrapping_add(j) as f64;
            let u = (0.5 + a1 * i).fract();
            let v = (0.5 + a2 * i).fract();
            let az = fov * (u - 0.5);
            // Uniform in sin(elevation) spreads rays evenly over the sphere band.
            let sin_e = s_lo + v * (s_hi - s_lo);
            let cos_e = (1.0 - sin_e * sin_e).sqrt();
            Vec3::new(cos_e * az.cos(), cos_e * az.sin(), sin_e)
        })
        .collect()
}

/// Casts every ray of the frame's pattern from `t_wl` and returns the noisy hits in L.
pub fn simulate_scan(
    t_wl: &RigidTransform,
    timestamp: f64,
    frame_index: u64,
    mount: &RigidTransform,
    scene: &Scene,
    params: &LidarParams,
    rng: &mut impl Rng,
) -> Result<ScanFrame> {
    if t_wl.from != Frame::Lidar || t_wl.to != Frame::World {
        return Err(Error::FrameMismatch { expected: Frame::World, found: t_wl.to });
    }
    let noise = Normal::new(0.0, params.range_noise).map_err(|e| Error::invalid("lidar.range_noise", e.to_string()))?;
    let origin = t_wl.translation;
    let min_cos = params.max_incidence_deg.to_radians().cos();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for dir in scan_pattern(frame_index, params) {
        // One draw per ray, hit or not, keeps the stream aligned with the pattern.
        let n: f64 = noise.sample(rng);
        let world_dir = t_wl.rotation * dir;
        if let Some(hit) = scene.raycast(&origin, &world_dir, params.max_range) {
            let normal = scene.surfaces[hit.surface].normal;
            if normal.dot(&world_dir).abs() < min_cos - 1e-12 {
                continue;
            }
            let range = (hit.range + n).clamp(0.0, params.max_range);
            points.push(dir * range);
            normals.push(normal);
        }
    }
    Ok(ScanFrame { timestamp, frame_index, points, true_pose: *t_wl, normals, mount: *mount })
}

/// IMU reading at the shell center: `gyro = ω_O + b_g + n_g`,
/// `accel = R_WOᵀ (a_W − g_W) + b_a + n_a`.
pub fn simulate_imu(
    state: &SimState,
    accel_world: &Vec3,
    gravity_world: &Vec3,
    bias: &ImuBias,
    params: &ImuParams,
    rng: &mut impl Rng,
) -> ImuSample {
    let gn = Normal::new(0.0, params.gyro_noise).expect("validated noise");
    let an = Normal::new(0.0, params.accel_noise).expect("validated noise");
    let mut draw = |d: &Normal<f64>| Vec3::new(d.sample(rng), d.sample(rng), d.sample(rng));
    let gyro = state.omega + bias.gyro + draw(&gn);
    let accel = state.pose.rotation.transpose() * (accel_world - gravity_world) + bias.accel + draw(&an);
    ImuSample { timestamp: state.time, gyro, accel }
}

/// Writes points as ASCII PLY with float x y z vertices.
pub fn write_ply(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header", points.len())?;
    for p in points {
        writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the vertices of an ASCII PLY written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<Vec3>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut count = None;
    for line in lines.by_ref() {
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = n.trim().parse::<usize>().ok();
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| Error::Config(format!("{}: missing vertex count", path.display())))?;
    let mut out = Vec::with_capacity(count);
    for line in lines.take(count) {
        let v: Vec<f64> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        if v.len() != 3 {
            return Err(Error::Config(format!("{}: bad vertex line `{line}`", path.display())));
        }
        out.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,gx,gy,gz,ax,ay,az")?;
    for s in samples {
        writeln!(w, "{:.6},{},{},{},{},{},{}", s.timestamp, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z)?;
    }
    w.flush()?;
    Ok(())
}
