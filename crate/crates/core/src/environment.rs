//! Synthetic scenes built from planar patches, the analytic reference
//! voxelization, ray casting, and terrain support queries for the rolling shell.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_x, rot_y, rot_z, Mat3, Vec3};

/// Bias applied before flooring voxel coordinates, in voxel units. Points that sit
/// exactly on a voxel boundary (walls at round coordinates) quantize the same way
/// regardless of rounding noise in how they were produced.
const VOXEL_SNAP: f64 = 1e-7;

/// Edge inset used when sampling surfaces, in meters. Must exceed the voxel snap.
const SAMPLE_INSET: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Lab,
    Corridor,
    Tactical,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lab" => Ok(SceneKind::Lab),
            "corridor" => Ok(SceneKind::Corridor),
            "tactical" => Ok(SceneKind::Tactical),
            other => Err(Error::Unknown { what: "scene kind", name: other.to_string() }),
        }
    }
}

/// Shape description of a scene element, as written in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Rectangle of size `extents` in its local xy plane, normal along local +z.
    /// `rotation_deg` is (roll, pitch, yaw) applied as Rz·Ry·Rx.
    Quad { center: [f64; 3], extents: [f64; 2], #[serde(default)] rotation_deg: [f64; 3] },
    /// Box of full size `extents`, rotated about the vertical by `yaw_deg`.
    Box { center: [f64; 3], extents: [f64; 3], #[serde(default)] yaw_deg: f64 },
    /// Inclined ramp rising along its local +x from `start` (a point on the floor at
    /// the middle of the low edge), followed by a flat platform of `platform_length`.
    Ramp { start: [f64; 2], #[serde(default)] yaw_deg: f64, length: f64, width: f64, angle_deg: f64, #[serde(default)] platform_length: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
// Unknown keys are rejected by `Shape`, since serde cannot deny them on a flattening struct.
pub struct Primitive {
    pub id: String,
    /// Surfaces the shell can roll on (floor, ramps). Obstacles are not ground.
    #[serde(default)]
    pub ground: bool,
    #[serde(flatten)]
    pub shape: Shape,
}

/// A planar patch: parallelogram `origin + s·e1 + t·e2` with s,t ∈ [0,1], or the
/// triangle s + t ≤ 1.
#[derive(Clone, Debug)]
pub struct Surface {
    pub id: usize,
    pub primitive: usize,
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub triangle: bool,
    pub normal: Vec3,
    pub ground: bool,
    // Inverse Gram matrix for recovering (s, t) from an in-plane point.
    gram_inv: [[f64; 2]; 2],
}

impl Surface {
    fn new(id: usize, primitive: usize, origin: Vec3, e1: Vec3, e2: Vec3, triangle: bool, ground: bool) -> Self {
        let normal = e1.cross(&e2).normalize();
        let (a, b, c) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
        let det = a * c - b * b;
        let gram_inv = [[c / det, -b / det], [-b / det, a / det]];
        Self { id, primitive, origin, e1, e2, triangle, normal, ground, gram_inv }
    }

    fn coords(&self, q: &Vec3) -> (f64, f64) {
        let d = q - self.origin;
        let (x, y) = (d.dot(&self.e1), d.dot(&self.e2));
        (self.gram_inv[0][0] * x + self.gram_inv[0][1] * y, self.gram_inv[1][0] * x + self.gram_inv[1][1] * y)
    }

    fn contains(&self, s: f64, t: f64, tol: f64) -> bool {
        if s < -tol || t < -tol {
            return false;
        }
        if self.triangle {
            s + t <= 1.0 + tol
        } else {
            s <= 1.0 + tol && t <= 1.0 + tol
        }
    }

    /// Ray-patch intersection distance, if any, in (min_t, max_t].
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.origin - origin)) / denom;
        if !(t > 1e-9 && t <= max_t) {
            return None;
        }
        let q = origin + dir * t;
        let (s, u) = self.coords(&q);
        self.contains(s, u, 1e-12).then_some(t)
    }

    /// Distance to the plane if the point projects inside the patch, else infinity.
    pub fn distance(&self, q: &Vec3) -> f64 {
        let (s, t) = self.coords(q);
        if self.contains(s, t, 1e-9) {
            self.normal.dot(&(q - self.origin)).abs()
        } else {
            f64::INFINITY
        }
    }

    fn edges(&self) -> Vec<(Vec3, Vec3)> {
        let (o, a, b) = (self.origin, self.origin + self.e1, self.origin + self.e2);
        if self.triangle {
            vec![(o, a), (a, b), (b, o)]
        } else {
            let c = o + self.e1 + self.e2;
            vec![(o, a), (a, c), (c, b), (b, o)]
        }
    }

    /// Area-covering samples at spacing no larger than `spacing`, including edges.
    fn samples(&self, spacing: f64, out: &mut Vec<Vec3>) {
        let n1 = (self.e1.norm() / spacing).ceil().max(1.0) as usize;
        let n2 = (self.e2.norm() / spacing).ceil().max(1.0) as usize;
        let (in1, in2) = (SAMPLE_INSET / self.e1.norm(), SAMPLE_INSET / self.e2.norm());
        let lerp = |i: usize, n: usize, inset: f64| inset + (1.0 - 2.0 * inset) * i as f64 / n as f64;
        let diag = in1.max(in2) * 2.0;
        for i in 0..=n1 {
            let s = lerp(i, n1, in1);
            for j in 0..=n2 {
                let t = lerp(j, n2, in2);
                if self.triangle && s + t > 1.0 - diag {
                    continue;
                }
                out.push(self.origin + self.e1 * s + self.e2 * t);
            }
        }
        if self.triangle {
            let n = n1.max(n2) * 2;
            for i in 0..=n {
                let s = lerp(i, n, in1) * (1.0 - diag);
                let t = 1.0 - diag - s;
                out.push(self.origin + self.e1 * s + self.e2 * t);
            }
        }
    }
}

/// An immutable scene: named primitives and the planar surfaces they expand into.
#[derive(Clone, Debug)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub surfaces: Vec<Surface>,
}

/// Result of a successful ray cast.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub point: Vec3,
    pub range: f64,
    pub surface: usize,
    pub primitive: usize,
}

impl Scene {
    pub fn empty() -> Self {
        Self { primitives: Vec::new(), surfaces: Vec::new() }
    }

    pub fn from_primitives(primitives: Vec<Primitive>) -> Result<Self> {
        let mut scene = Scene::empty();
        for p in primitives {
            scene.add(p)?;
        }
        Ok(scene)
    }

    pub fn add(&mut self, primitive: Primitive) -> Result<()> {
        validate_shape(&primitive)?;
        let index = self.primitives.len();
        let ground = primitive.ground;
        let mut patches: Vec<(Vec3, Vec3, Vec3, bool, bool)> = Vec::new();
        match &primitive.shape {
            Shape::Quad { center, extents, rotation_deg } => {
                let r = rotation_from_deg(rotation_deg);
                let (ex, ey) = (r * Vec3::x() * extents[0], r * Vec3::y() * extents[1]);
                let c = Vec3::from(*center);
                patches.push((c - ex * 0.5 - ey * 0.5, ex, ey, false, ground));
            }
            Shape::Box { center, extents, yaw_deg } => {
                let r = rot_z(yaw_deg.to_radians());
                let c = Vec3::from(*center);
                let h = Vec3::from(*extents) * 0.5;
                let (ax, ay, az) = (r * Vec3::x() * h.x, r * Vec3::y() * h.y, Vec3::z() * h.z);
                // Outward-facing quads (e1 × e2 points out of the box).
                let faces = [
                    (c + ax - ay - az, ay * 2.0, az * 2.0),
                    (c - ax - ay - az, az * 2.0, ay * 2.0),
                    (c - ax + ay - az, az * 2.0, ax * 2.0),
                    (c - ax - ay - az, az * 2.0, ax * 2.0),
                    (c - ax - ay + az, ax * 2.0, ay * 2.0),
                    (c - ax - ay - az, ay * 2.0, ax * 2.0),
                ];
                for (o, e1, e2) in faces {
                    patches.push((o, e1, e2, false, false));
                }
            }
            Shape::Ramp { start, yaw_deg, length, width, angle_deg, platform_length } => {
                let r = rot_z(yaw_deg.to_radians());
                let base = Vec3::new(start[0], start[1], 0.0);
                let height = length * angle_deg.to_radians().tan();
                let fwd = r * Vec3::x();
                let left = r * Vec3::y();
                let up = Vec3::z();
                let w = left * *width;
                let low_right = base - w * 0.5;
                let top_right = low_right + fwd * *length + up * height;
                // Incline (normal tilted back against +x, upward).
                patches.push((low_right, fwd * *length + up * height, w, false, ground));
                // Side triangles below the incline.
                let far_right = low_right + fwd * *length;
                patches.push((far_right, -fwd * *length, up * height, true, false));
                patches.push((far_right + w, up * height, -fwd * *length, true, false));
                let end = if *platform_length > 0.0 {
                    let p = fwd * *platform_length;
                    patches.push((top_right, p, w, false, ground));
                    patches.push((far_right, p, up * height, false, false));
                    patches.push((far_right + w, up * height, p, false, false));
                    far_right + p
                } else {
                    far_right
                };
                // Vertical back face.
                patches.push((end, w, up * height, false, false));
            }
        }
        for (o, e1, e2, tri, g) in patches {
            let id = self.surfaces.len();
            self.surfaces.push(Surface::new(id, index, o, e1, e2, tri, g));
        }
        self.primitives.push(primitive);
        Ok(())
    }

    pub fn primitive_index(&self, id: &str) -> Option<usize> {
        self.primitives.iter().position(|p| p.id == id)
    }

    /// Nearest intersection along a unit ray within `max_range`.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<RayHit> {
        let mut best: Option<(f64, &Surface)> = None;
        for s in &self.surfaces {
            let limit = best.map_or(max_range, |b| b.0);
            if let Some(t) = s.intersect(origin, dir, limit) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, s));
                }
            }
        }
        best.map(|(t, s)| RayHit { point: origin + dir * t, range: t, surface: s.id, primitive: s.primitive })
    }

    /// Dense analytic voxelization of every surface.
    pub fn reference_voxels(&self, resolution: f64) -> VoxelGrid {
        self.reference_voxels_where(resolution, |_| true)
    }

    /// Reference voxelization restricted to primitives accepted by `keep`.
    pub fn reference_voxels_where(&self, resolution: f64, keep: impl Fn(&Primitive) -> bool) -> VoxelGrid {
        let mut grid = VoxelGrid::new(resolution);
        let mut buf = Vec::new();
        for s in &self.surfaces {
            if !keep(&self.primitives[s.primitive]) {
                continue;
            }
            buf.clear();
            s.samples(resolution / 4.0, &mut buf);
            grid.extend(buf.iter());
        }
        grid
    }

    /// Height of the center of a sphere of `radius` resting on the ground surfaces at
    /// horizontal position (x, y), and the contact normal. `None` when no ground
    /// surface is within reach.
    pub fn ground_support(&self, x: f64, y: f64, radius: f64) -> Option<(f64, Vec3)> {
        let mut best: Option<(f64, Vec3)> = None;
        let mut consider = |z: f64, q: Vec3| {
            if best.is_none_or(|b| z > b.0) {
                best = Some((z, q));
            }
        };
        for s in self.surfaces.iter().filter(|s| s.ground && s.normal.z > 1e-3) {
            let n = s.normal;
            // Tangent contact with the supporting plane.
            let contact_xy = (x - radius * n.x, y - radius * n.y);
            let plane_z = s.origin.z - (n.x * (contact_xy.0 - s.origin.x) + n.y * (contact_xy.1 - s.origin.y)) / n.z;
            let q = Vec3::new(contact_xy.0, contact_xy.1, plane_z);
            let (cs, ct) = s.coords(&q);
            if s.contains(cs, ct, 0.0) {
                consider(plane_z + radius * n.z, q);
            }
            for (a, b) in s.edges() {
                if let Some((z, q)) = edge_support(x, y, radius, &a, &b) {
                    consider(z, q);
                }
            }
        }
        best.map(|(z, q)| {
            let n = (Vec3::new(x, y, z) - q) / radius;
            (z, n)
        })
    }
}

/// Highest sphere-center height supported by a segment, via ternary search of the
/// concave height profile over the part of the segment within reach.
fn edge_support(x: f64, y: f64, radius: f64, a: &Vec3, b: &Vec3) -> Option<(f64, Vec3)> {
    let d = b - a;
    let (px, py) = (a.x - x, a.y - y);
    // |p + λ d_xy|² ≤ r²
    let qa = d.x * d.x + d.y * d.y;
    let qb = 2.0 * (px * d.x + py * d.y);
    let qc = px * px + py * py - radius * radius;
    let (lo, hi) = if qa < 1e-18 {
        if qc > 0.0 {
            return None;
        }
        (0.0, 1.0)
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        (((-qb - sq) / (2.0 * qa)).max(0.0), ((-qb + sq) / (2.0 * qa)).min(1.0))
    };
    if lo > hi {
        return None;
    }
    let height = |l: f64| {
        let q = a + d * l;
        let h2 = radius * radius - (q.x - x).powi(2) - (q.y - y).powi(2);
        q.z + h2.max(0.0).sqrt()
    };
    let (mut l, mut h) = (lo, hi);
    for _ in 0..80 {
        let m1 = l + (h - l) / 3.0;
        let m2 = h - (h - l) / 3.0;
        if height(m1) < height(m2) {
            l = m1;
        } else {
            h = m2;
        }
    }
    let lam = 0.5 * (l + h);
    Some((height(lam), a + d * lam))
}

fn rotation_from_deg(rpy: &[f64; 3]) -> Mat3 {
    rot_z(rpy[2].to_radians()) * rot_y(rpy[1].to_radians()) * rot_x(rpy[0].to_radians())
}

fn validate_shape(p: &Primitive) -> Result<()> {
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    let bad = |reason: &str| Err(Error::invalid(format!("scene.{}", p.id), reason));
    match &p.shape {
        Shape::Quad { center, extents, rotation_deg } => {
            if !finite(center) || !finite(rotation_deg) || !extents.iter().all(|e| e.is_finite() && *e > 0.0) {
                return bad("quad needs finite center/rotation and positive extents");
            }
        }
        Shape::Box { center, extents, yaw_deg } => {
            if !finite(center) || !yaw_deg.is_finite() || !extents.iter().all(|e| e.is_finite() && *e > 0.0) {
                return bad("box needs finite center/yaw and positive extents");
            }
        }
        Shape::Ramp { start, yaw_deg, length, width, angle_deg, platform_length } => {
            if !finite(start) || !yaw_deg.is_finite() || !(*length > 0.0) || !(*width > 0.0) || !(*platform_length >= 0.0) {
                return bad("ramp needs positive length/width and non-negative platform");
            }
            if !(*angle_deg > 0.0 && *angle_deg < 60.0) {
                return bad("ramp angle must be in (0, 60) degrees");
            }
        }
    }
    Ok(())
}

/// Set of occupied voxel indices at a fixed resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub resolution: f64,
    pub occupied: HashSet<[i64; 3]>,
}

impl VoxelGrid {
    pub fn new(resolution: f64) -> Self {
        assert!(resolution > 0.0, "voxel resolution must be positive");
        Self { resolution, occupied: HashSet::new() }
    }

    pub fn index_of(&self, p: &Vec3) -> [i64; 3] {
        voxel_index(p, self.resolution)
    }

    pub fn insert(&mut self, p: &Vec3) {
        let idx = self.index_of(p);
        self.occupied.insert(idx);
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn contains(&self, idx: &[i64; 3]) -> bool {
        self.occupied.contains(idx)
    }

    pub fn center(&self, idx: &[i64; 3]) -> Vec3 {
        Vec3::new(idx[0] as f64 + 0.5, idx[1] as f64 + 0.5, idx[2] as f64 + 0.5) * self.resolution
    }

    /// Occupied indices in lexicographic order.
    pub fn sorted(&self) -> Vec<[i64; 3]> {
        let mut v: Vec<_> = self.occupied.iter().copied().collect();
        v.sort_unstable();
        v
    }
}

impl<'a> Extend<&'a Vec3> for VoxelGrid {
    fn extend<I: IntoIterator<Item = &'a Vec3>>(&mut self, iter: I) {
        for p in iter {
            self.insert(p);
        }
    }
}

pub fn voxel_index(p: &Vec3, resolution: f64) -> [i64; 3] {
    let q = |x: f64| (x / resolution + VOXEL_SNAP).floor() as i64;
    [q(p.x), q(p.y), q(p.z)]
}

fn quad(id: &str, ground: bool, center: [f64; 3], extents: [f64; 2], rotation_deg: [f64; 3]) -> Primitive {
    Primitive { id: id.into(), ground, shape: Shape::Quad { center, extents, rotation_deg } }
}

fn boxed(id: &str, center: [f64; 3], extents: [f64; 3], yaw_deg: f64) -> Primitive {
    Primitive { id: id.into(), ground: false, shape: Shape::Box { center, extents, yaw_deg } }
}

/// Floor, ceiling, and four inward-facing walls of an axis-aligned room centered
/// on the origin.
fn room(length_x: f64, width_y: f64, height: f64) -> Vec<Primitive> {
    let (hx, hy, hz) = (length_x * 0.5, width_y * 0.5, height * 0.5);
    vec![
        quad("floor", true, [0.0, 0.0, 0.0], [length_x, width_y], [0.0, 0.0, 0.0]),
        quad("ceiling", false, [0.0, 0.0, height], [length_x, width_y], [180.0, 0.0, 0.0]),
        quad("wall_north", false, [0.0, hy, hz], [length_x, height], [90.0, 0.0, 0.0]),
        quad("wall_south", false, [0.0, -hy, hz], [length_x, height], [-90.0, 0.0, 0.0]),
        quad("wall_east", false, [hx, 0.0, hz], [height, width_y], [0.0, -90.0, 0.0]),
        quad("wall_west", false, [-hx, 0.0, hz], [height, width_y], [0.0, 90.0, 0.0]),
    ]
}

/// Footprint of the prone dummy in the tactical scene.
pub const DUMMY_CENTER: [f64; 2] = [-2.0, 2.0];
pub const DUMMY_PREFIX: &str = "dummy";

/// Reference voxels of the dummy above the floor layer. The bottom layer is
/// dropped because floor returns fill it whether or not the dummy was seen.
pub fn dummy_reference_voxels(scene: &Scene, resolution: f64) -> VoxelGrid {
    let mut grid = scene.reference_voxels_where(resolution, |p| p.id.starts_with(DUMMY_PREFIX));
    grid.occupied.retain(|idx| idx[2] > 0);
    grid
}

/// Built-in scenes. Floors are at z = 0.
pub fn build_scene(kind: SceneKind) -> Scene {
    let mut prims = Vec::new();
    match kind {
        SceneKind::Lab => {
            prims.extend(room(8.0, 8.0, 2.5));
            prims.push(boxed("desk_1", [-2.6, 3.3, 0.375], [1.4, 0.7, 0.75], 0.0));
            prims.push(boxed("desk_2", [0.2, 3.3, 0.375], [1.4, 0.7, 0.75], 0.0));
            prims.push(boxed("desk_3", [2.8, -3.3, 0.375], [1.4, 0.7, 0.75], 0.0));
            prims.push(boxed("desk_4", [-3.3, -1.0, 0.375], [0.7, 1.4, 0.75], 0.0));
            prims.push(boxed("cabinet_1", [3.5, 2.2, 0.9], [0.5, 1.0, 1.8], 0.0));
            prims.push(boxed("cabinet_2", [-0.8, -3.6, 0.9], [1.0, 0.5, 1.8], 0.0));
            prims.push(boxed("chair_1", [1.2, 2.6, 0.225], [0.5, 0.5, 0.45], 20.0));
            prims.push(boxed("chair_2", [-2.6, 2.5, 0.225], [0.5, 0.5, 0.45], -15.0));
            prims.push(boxed("equipment", [2.9, 0.0, 0.3], [0.6, 0.8, 0.6], 35.0));
        }
        SceneKind::Corridor => {
            prims.extend(room(20.0, 2.0, 2.5));
        }
        SceneKind::Tactical => {
            prims.extend(room(10.0, 10.0, 3.0));
            prims.push(Primitive {
                id: "ramp".into(),
                ground: true,
                shape: Shape::Ramp { start: [-1.0, -3.0], yaw_deg: 0.0, length: 2.0, width: 2.0, angle_deg: 14.0, platform_length: 2.0 },
            });
            let [cx, cy] = DUMMY_CENTER;
            // Prone figure along +x: legs, torso, head.
            prims.push(boxed("dummy_legs", [cx - 0.45, cy, 0.09], [0.8, 0.4, 0.18], 0.0));
            prims.push(boxed("dummy_torso", [cx + 0.275, cy, 0.125], [0.65, 0.5, 0.25], 0.0));
            prims.push(boxed("dummy_head", [cx + 0.725, cy, 0.1], [0.25, 0.2, 0.2], 0.0));
            prims.push(boxed("crate_1", [3.2, 3.2, 0.5], [1.0, 1.0, 1.0], 0.0));
            prims.push(boxed("crate_2", [3.8, 0.6, 0.4], [0.8, 1.2, 0.8], 15.0));
            prims.push(boxed("barrier", [-3.8, -0.6, 0.5], [0.3, 1.6, 1.0], 0.0));
        }
    }
    Scene::from_primitives(prims).expect("built-in scenes are valid")
}
