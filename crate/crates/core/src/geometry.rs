//! Frame-tagged rigid transforms and the SO(3) helpers used throughout the
//! simulator and the estimator.

use std::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Coordinate frames that appear in the robot model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    /// Fixed world frame, z up.
    World,
    /// Shell frame at the sphere center. Carries the IMU and the LiDAR mount.
    Shell,
    /// Internal differential-drive unit.
    Drive,
    /// LiDAR sensor frame.
    Lidar,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Frame::World => "W",
            Frame::Shell => "O",
            Frame::Drive => "I",
            Frame::Lidar => "L",
        };
        f.write_str(s)
    }
}

/// Skew-symmetric matrix such that `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] for a skew-symmetric input.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues' formula for the exponential map of so(3).
pub fn exp_so3(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let k = hat(omega);
    let (a, b) = if theta2 < 1e-12 {
        // Taylor expansion keeps the small-angle case accurate to machine precision.
        (1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Logarithm of a rotation matrix, returning the rotation vector.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        // sin(theta)/theta ~ 1 - theta^2/6
        return w * (0.5 * (1.0 + theta * theta / 6.0));
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near pi the antisymmetric part vanishes; recover the axis from the symmetric part.
        let s = (r + Mat3::identity()) * 0.5;
        let (i, _) = (0..3)
            .map(|i| (i, s[(i, i)]))
            .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        let mut axis = s.column(i).into_owned();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / (2.0 * theta.sin()))
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    if theta2 < 1e-10 {
        return Mat3::identity() - k * 0.5 + k * k / 6.0;
    }
    let theta = theta2.sqrt();
    Mat3::identity() - k * ((1.0 - theta.cos()) / theta2) + k * k * ((theta - theta.sin()) / (theta2 * theta))
}

/// Inverse of the right Jacobian of SO(3).
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    if theta2 < 1e-10 {
        return Mat3::identity() + k * 0.5 + k * k / 12.0;
    }
    let theta = theta2.sqrt();
    let coef = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + k * 0.5 + k * k * coef
}

/// Projects a near-rotation onto SO(3) with the polar decomposition.
pub fn renormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Yaw of a rotation matrix (heading of its x axis projected onto the xy plane).
pub fn yaw_of(r: &Mat3) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = a % two_pi;
    if x > std::f64::consts::PI {
        x -= two_pi;
    } else if x <= -std::f64::consts::PI {
        x += two_pi;
    }
    x
}

/// A rigid transform `T_to_from` mapping points expressed in `from` into `to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub from: Frame,
    pub to: Frame,
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3, from: Frame, to: Frame) -> Self {
        Self { rotation, translation, from, to }
    }

    pub fn identity(from: Frame, to: Frame) -> Self {
        Self::new(Mat3::identity(), Vec3::zeros(), from, to)
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Result<RigidTransform> {
        if other.to != self.from {
            return Err(Error::FrameMismatch { expected: self.from, found: other.to });
        }
        Ok(RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
            from: other.from,
            to: self.to,
        })
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation), from: self.to, to: self.from }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn renormalized(mut self) -> Self {
        self.rotation = renormalize(&self.rotation);
        self
    }
}

/// Free-function form of [`RigidTransform::compose`].
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> Result<RigidTransform> {
    a.compose(b)
}

/// Free-function form of [`RigidTransform::inverse`].
pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn frame() -> impl Strategy<Value = Frame> {
        prop_oneof![Just(Frame::World), Just(Frame::Shell), Just(Frame::Drive), Just(Frame::Lidar)]
    }

    fn transform(from: Frame, to: Frame) -> impl Strategy<Value = RigidTransform> {
        (vec3(), vec3()).prop_map(move |(w, t)| RigidTransform::new(exp_so3(&w), t, from, to))
    }

    // Truncated power series of the matrix exponential.
    fn series_exp(m: &Mat3, terms: usize) -> Mat3 {
        let mut out = Mat3::identity();
        let mut term = Mat3::identity();
        for k in 1..terms {
            term = term * m / k as f64;
            out += term;
        }
        out
    }

    #[test]
    fn hat_zero_and_ez() {
        assert_eq!(hat(&Vec3::zeros()), Mat3::zeros());
        let e = hat(&Vec3::z());
        assert_eq!(e, Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn exp_zero_and_quarter_turn() {
        assert_eq!(exp_so3(&Vec3::zeros()), Mat3::identity());
        let r = exp_so3(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert!((r * Vec3::x() - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = RigidTransform::new(exp_so3(&Vec3::new(0.3, -0.2, 1.1)), Vec3::new(1.0, 2.0, 3.0), Frame::Shell, Frame::World);
        let id = RigidTransform::identity(Frame::Shell, Frame::Shell);
        assert_eq!(t.compose(&id).unwrap(), t);
        let round = t.compose(&t.inverse()).unwrap();
        assert!((round.rotation - Mat3::identity()).norm() < 1e-12);
        assert!(round.translation.norm() < 1e-12);
        assert_eq!((round.from, round.to), (Frame::World, Frame::World));
    }

    #[test]
    fn compose_rejects_mismatch() {
        let a = RigidTransform::identity(Frame::Shell, Frame::World);
        let b = RigidTransform::identity(Frame::Drive, Frame::Lidar);
        assert!(matches!(a.compose(&b), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn log_near_pi() {
        let w = Vec3::new(0.0, 1.0, 1.0).normalize() * (std::f64::consts::PI - 1e-8);
        let got = log_so3(&exp_so3(&w));
        assert!((got - w).norm() < 1e-6);
    }

    proptest! {
        #[test]
        fn hat_matches_cross(v in vec3(), w in vec3()) {
            prop_assert!((hat(&v) * w - v.cross(&w)).norm() < 1e-12);
            prop_assert!((hat(&v).transpose() + hat(&v)).norm() == 0.0);
        }

        #[test]
        fn exp_matches_series(w in vec3()) {
            let w = if w.norm() >= 3.1 { w * (3.1 / w.norm()) } else { w };
            let r = exp_so3(&w);
            // 20 terms leave a ~1e-9 tail near |w| = pi; 30 terms are exact to rounding.
            prop_assert!((r - series_exp(&hat(&w), 30)).norm() <= 1e-10);
            prop_assert!(orthonormality_error(&r) <= 1e-10);
            prop_assert!((r.determinant() - 1.0).abs() <= 1e-10);
            prop_assert!((exp_so3(&-w) - r.transpose()).norm() <= 1e-12);
        }

        #[test]
        fn log_inverts_exp(w in vec3()) {
            let w = if w.norm() >= 3.0 { w * (3.0 / w.norm()) } else { w };
            prop_assert!((log_so3(&exp_so3(&w)) - w).norm() < 1e-9);
        }

        #[test]
        fn compose_matches_sequential(a in transform(Frame::Shell, Frame::World), b in transform(Frame::Lidar, Frame::Shell), p in vec3()) {
            let ab = a.compose(&b).unwrap();
            prop_assert!((ab.apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-12);
            let inv = b.inverse();
            prop_assert_eq!((inv.from, inv.to), (Frame::Shell, Frame::Lidar));
            prop_assert!((inv.apply(&b.apply(&p)) - p).norm() < 1e-12);
        }

        #[test]
        fn compose_is_associative(a in transform(Frame::Shell, Frame::World), b in transform(Frame::Drive, Frame::Shell), c in transform(Frame::Lidar, Frame::Drive)) {
            let left = a.compose(&b).unwrap().compose(&c).unwrap();
            let right = a.compose(&b.compose(&c).unwrap()).unwrap();
            prop_assert!((left.rotation - right.rotation).norm() < 1e-12);
            prop_assert!((left.translation - right.translation).norm() < 1e-12);
        }

        #[test]
        fn random_chains_reject_mismatches(frames in proptest::collection::vec(frame(), 2..6), extra in (frame(), frame()), w in vec3()) {
            // Consecutive links are (frames[i+1] -> frames[i]); a chain is valid only if links line up.
            let links: Vec<RigidTransform> = frames.windows(2)
                .map(|f| RigidTransform::new(exp_so3(&w), w, f[1], f[0]))
                .collect();
            let broken = RigidTransform::new(Mat3::identity(), Vec3::zeros(), extra.0, extra.1);
            let mut acc = links[0];
            for l in &links[1..] {
                acc = acc.compose(l).unwrap();
            }
            prop_assert_eq!(acc.to, frames[0]);
            let res = acc.compose(&broken);
            prop_assert_eq!(res.is_ok(), broken.to == acc.from);
        }

        #[test]
        fn right_jacobian_inverse_pair(w in vec3()) {
            let w = w * 0.5;
            prop_assert!((right_jacobian(&w) * right_jacobian_inv(&w) - Mat3::identity()).norm() < 1e-10);
        }
    }
}
