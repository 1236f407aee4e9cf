use std::collections::{HashMap, HashSet};

use nalgebra::SymmetricEigen;

use crate::environment::voxel_index;
use crate::geometry::{Mat3, RigidTransform, Vec3};

/// Plane exposed by a voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub centroid: Vec3,
    /// `1 − λ_min/λ_max` of the point scatter.
    pub planarity: f64,
}

/// Running moments of the points in one voxel, taken about the voxel center.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoxelCell {
    pub count: usize,
    sum: Vec3,
    outer: Mat3,
    pub plane: Option<Plane>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapParams {
    pub resolution: f64,
    pub min_points: usize,
    /// Largest accepted `λ_min/λ_max`.
    pub max_eigen_ratio: f64,
    /// Largest accepted RMS distance of the points from their plane (m).
    pub max_thickness: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self { resolution: 0.5, min_points: 6, max_eigen_ratio: 0.1, max_thickness: 0.04 }
    }
}

/// Voxel-hashed point statistics with per-voxel plane fits.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMap {
    pub params: MapParams,
    cells: HashMap<[i64; 3], VoxelCell>,
    points: usize,
}

impl LocalMap {
    pub fn new(params: MapParams) -> Self {
        Self { params, cells: HashMap::new(), points: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn point_count(&self) -> usize {
        self.points
    }

    pub fn planes(&self) -> impl Iterator<Item = &Plane> {
        self.cells.values().filter_map(|c| c.plane.as_ref())
    }

    fn center(&self, key: &[i64; 3]) -> Vec3 {
        let r = self.params.resolution;
        Vec3::new(key[0] as f64 + 0.5, key[1] as f64 + 0.5, key[2] as f64 + 0.5) * r
    }

    /// Plane of the voxel containing `q`, if that voxel is planar.
    pub fn plane_at(&self, q: &Vec3) -> Option<&Plane> {
        self.cells.get(&voxel_index(q, self.params.resolution))?.plane.as_ref()
    }

    /// Plane nearest to `q` among the voxel containing it and that voxel's six face
    /// neighbors. Surfaces lying on a voxel face scatter their points across both
    /// sides, so looking only in the containing voxel would skip one side.
    pub fn nearest_plane(&self, q: &Vec3) -> Option<&Plane> {
        const OFFSETS: [[i64; 3]; 7] = [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
        let k = voxel_index(q, self.params.resolution);
        let distance = |p: &Plane| p.normal.dot(&(q - p.centroid)).abs();
        OFFSETS
            .iter()
            .filter_map(|o| self.cells.get(&[k[0] + o[0], k[1] + o[1], k[2] + o[2]])?.plane.as_ref())
            .min_by(|a, b| distance(a).total_cmp(&distance(b)))
    }

    /// Adds world-frame points and refits the touched voxels.
    pub fn insert_world(&mut self, points: &[Vec3]) {
        let mut touched = HashSet::new();
        for q in points {
            let key = voxel_index(q, self.params.resolution);
            let d = q - self.center(&key);
            touched.insert(key);
            let cell = self.cells.entry(key).or_default();
            cell.count += 1;
            cell.sum += d;
            cell.outer += d * d.transpose();
        }
        self.points += points.len();
        for key in touched {
            let center = self.center(&key);
            let params = self.params;
            let cell = self.cells.get_mut(&key).unwrap();
            cell.plane = fit_plane(cell, &center, &params);
        }
    }

    /// Transforms sensor-frame points by `pose` (T_WL) and inserts them.
    pub fn insert_scan(&mut self, points: &[Vec3], pose: &RigidTransform) {
        let world: Vec<Vec3> = points.iter().map(|p| pose.apply(p)).collect();
        self.insert_world(&world);
    }
}

fn fit_plane(cell: &VoxelCell, center: &Vec3, params: &MapParams) -> Option<Plane> {
    if cell.count < params.min_points {
        return None;
    }
    let n = cell.count as f64;
    let mean = cell.sum / n;
    let cov = cell.outer / n - mean * mean.transpose();
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, mid, hi) = (eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    // Collinear points leave the normal undetermined, so the middle spread must be
    // comparable to the largest as well.
    if !(hi > 0.0) || lo / hi >= params.max_eigen_ratio || mid / hi < params.max_eigen_ratio || lo.sqrt() > params.max_thickness {
        return None;
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let k = normal.iamax();
    if normal[k] < 0.0 {
        normal = -normal;
    }
    Some(Plane { normal, centroid: center + mean, planarity: 1.0 - lo / hi })
}
