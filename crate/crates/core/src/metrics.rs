//! Map completeness, tracking error, near-ground visibility, elevation diversity and
//! registration conditioning.

use nalgebra::Vector2;

use crate::control::ReferenceTrajectory;
use crate::environment::VoxelGrid;
use crate::error::{Error, Result};
use crate::estimator::{normal_matrix, Correspondence};
use crate::estimator::lio::{min_eigenvalue, Mat6};
use crate::geometry::Vec3;
use crate::sensors::ScanFrame;

/// Voxel recall `|V_ref ∩ V_est| / |V_ref|`.
pub fn completeness(reference: &VoxelGrid, estimate: &VoxelGrid) -> Result<f64> {
    if (reference.resolution - estimate.resolution).abs() > 1e-12 * reference.resolution {
        return Err(Error::ResolutionMismatch { left: reference.resolution, right: estimate.resolution });
    }
    if reference.is_empty() {
        return Err(Error::Empty("reference voxel grid"));
    }
    let hit = reference.occupied.iter().filter(|v| estimate.occupied.contains(*v)).count();
    Ok(hit as f64 / reference.len() as f64)
}

/// Mean distance between executed positions and the time-indexed reference.
pub fn mean_tracking_error(executed: &[(f64, Vector2<f64>)], reference: &ReferenceTrajectory) -> Result<f64> {
    if executed.is_empty() {
        return Err(Error::Empty("executed trajectory"));
    }
    let sum: f64 = executed.iter().map(|(t, p)| (reference.state(*t).position - p).norm()).sum();
    Ok(sum / executed.len() as f64)
}

/// Mean of per-sample deviations, bucketed by lap.
pub fn per_lap_means(samples: &[(f64, f64)], lap_time: f64) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for &(t, e) in samples {
        let lap = (t / lap_time).floor().max(0.0) as usize;
        if sums.len() <= lap {
            sums.resize(lap + 1, (0.0, 0));
        }
        sums[lap].0 += e;
        sums[lap].1 += 1;
    }
    sums.into_iter().filter(|s| s.1 > 0).map(|(s, n)| s / n as f64).collect()
}

/// Counts returns below a height threshold among those near the sensor.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NearGround {
    pub low: u64,
    pub total: u64,
}

pub const NEAR_GROUND_HEIGHT: f64 = 0.3;
pub const NEAR_GROUND_RADIUS: f64 = 3.0;

impl NearGround {
    /// Adds world-frame returns taken from `sensor`. Only returns within `radius`
    /// horizontally of the sensor are counted.
    pub fn add(&mut self, sensor: &Vec3, points: &[Vec3], height: f64, radius: f64) {
        for p in points {
            if (p.xy() - sensor.xy()).norm() <= radius {
                self.total += 1;
                if p.z < height {
                    self.low += 1;
                }
            }
        }
    }

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.low as f64 / self.total as f64
        }
    }
}

/// Fraction of returns near the sensor path that lie below `height`.
pub fn near_ground_fraction(scans: &[(Vec3, Vec<Vec3>)], height: f64, radius: f64) -> f64 {
    let mut acc = NearGround::default();
    for (sensor, points) in scans {
        acc.add(sensor, points, height, radius);
    }
    acc.fraction()
}

pub const ELEVATION_BINS: usize = 36;

/// Histogram of world-frame return elevations over [−90°, 90°].
#[derive(Clone, Debug, PartialEq)]
pub struct ElevationHistogram {
    pub bins: [u64; ELEVATION_BINS],
}

impl Default for ElevationHistogram {
    fn default() -> Self {
        Self { bins: [0; ELEVATION_BINS] }
    }
}

impl ElevationHistogram {
    pub fn add_direction(&mut self, d: &Vec3) {
        let n = d.norm();
        if n == 0.0 {
            return;
        }
        let e = (d.z / n).clamp(-1.0, 1.0).asin();
        let k = ((e + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI * ELEVATION_BINS as f64) as usize;
        self.bins[k.min(ELEVATION_BINS - 1)] += 1;
    }

    /// Adds the elevation of every return of a frame, using its true pose.
    pub fn add_scan(&mut self, scan: &ScanFrame) {
        for p in &scan.points {
            self.add_direction(&(scan.true_pose.rotation * p));
        }
    }

    /// Shannon entropy in bits.
    pub fn entropy(&self) -> f64 {
        let total: u64 = self.bins.iter().sum();
        if total == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.log2()
            })
            .sum()
    }
}

pub fn elevation_entropy(scans: &[ScanFrame]) -> f64 {
    let mut h = ElevationHistogram::default();
    for s in scans {
        h.add_scan(s);
    }
    h.entropy()
}

/// Point-to-plane normal matrix of one frame at its true pose using the true
/// surface normals, over body-frame `[δθ, δp]`.
pub fn frame_normal_matrix(scan: &ScanFrame) -> Mat6 {
    let corrs: Vec<Correspondence> = scan
        .points
        .iter()
        .zip(&scan.normals)
        .map(|(z, n)| Correspondence { point: scan.mount.apply(z), normal: *n, centroid: Vec3::zeros() })
        .collect();
    let r_wo = scan.true_pose.rotation * scan.mount.rotation.transpose();
    normal_matrix(&corrs, &r_wo)
}

/// Running mean of the per-frame smallest eigenvalue of the registration normal matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Conditioning {
    pub sum: f64,
    pub frames: u64,
}

impl Conditioning {
    pub fn add_scan(&mut self, scan: &ScanFrame) {
        self.sum += min_eigenvalue(&frame_normal_matrix(scan)).max(0.0);
        self.frames += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.sum / self.frames as f64
        }
    }
}
