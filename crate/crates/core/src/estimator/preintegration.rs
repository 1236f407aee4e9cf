use nalgebra::SMatrix;

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, hat, right_jacobian, Mat3, Vec3};
use crate::sensors::{ImuBias, ImuSample};

pub type Mat9 = SMatrix<f64, 9, 9>;

/// Relative motion summary between two frames, expressed in the first body frame.
/// Covariance is ordered `[δθ, δv, δp]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Preintegrated {
    pub delta_r: Mat3,
    pub delta_v: Vec3,
    pub delta_p: Vec3,
    pub duration: f64,
    pub covariance: Mat9,
    /// Bias the integrals were computed with.
    pub bias: ImuBias,
    pub dr_dbg: Mat3,
    pub dv_dbg: Mat3,
    pub dv_dba: Mat3,
    pub dp_dbg: Mat3,
    pub dp_dba: Mat3,
}

/// Per-sample white-noise standard deviations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoise {
    pub gyro: f64,
    pub accel: f64,
}

impl Preintegrated {
    fn identity(bias: ImuBias) -> Self {
        Self {
            delta_r: Mat3::identity(),
            delta_v: Vec3::zeros(),
            delta_p: Vec3::zeros(),
            duration: 0.0,
            covariance: Mat9::zeros(),
            bias,
            dr_dbg: Mat3::zeros(),
            dv_dbg: Mat3::zeros(),
            dv_dba: Mat3::zeros(),
            dp_dbg: Mat3::zeros(),
            dp_dba: Mat3::zeros(),
        }
    }

    /// First-order correction of the integrals to a new bias.
    pub fn corrected(&self, bias: &ImuBias) -> (Mat3, Vec3, Vec3) {
        let dbg = bias.gyro - self.bias.gyro;
        let dba = bias.accel - self.bias.accel;
        (
            self.delta_r * exp_so3(&(self.dr_dbg * dbg)),
            self.delta_v + self.dv_dbg * dbg + self.dv_dba * dba,
            self.delta_p + self.dp_dbg * dbg + self.dp_dba * dba,
        )
    }

    fn integrate(&mut self, gyro: &Vec3, accel: &Vec3, dt: f64, noise: &ImuNoise) {
        let w = gyro - self.bias.gyro;
        let a = accel - self.bias.accel;
        let inc = exp_so3(&(w * dt));
        let jr = right_jacobian(&(w * dt));
        let r = self.delta_r;
        let ra_hat = r * hat(&a);

        let mut f = Mat9::identity();
        f.fixed_view_mut::<3, 3>(0, 0).copy_from(&inc.transpose());
        f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-ra_hat * dt));
        f.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-ra_hat * (0.5 * dt * dt)));
        f.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Mat3::identity() * dt));
        let mut g = SMatrix::<f64, 9, 6>::zeros();
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        g.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r * dt));
        g.fixed_view_mut::<3, 3>(6, 3).copy_from(&(r * (0.5 * dt * dt)));
        let mut q = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..3 {
            q[(i, i)] = noise.gyro * noise.gyro;
            q[(i + 3, i + 3)] = noise.accel * noise.accel;
        }
        self.covariance = f * self.covariance * f.transpose() + g * q * g.transpose();

        self.dp_dba += self.dv_dba * dt - r * (0.5 * dt * dt);
        self.dp_dbg += self.dv_dbg * dt - ra_hat * self.dr_dbg * (0.5 * dt * dt);
        self.dv_dba -= r * dt;
        self.dv_dbg -= ra_hat * self.dr_dbg * dt;
        self.dr_dbg = inc.transpose() * self.dr_dbg - jr * dt;

        self.delta_p += self.delta_v * dt + r * a * (0.5 * dt * dt);
        self.delta_v += r * a * dt;
        self.delta_r = r * inc;
        self.duration += dt;
    }
}

/// Integrates bias-corrected samples over `[samples[0].timestamp, t_end]`. Each
/// sample is held until the next one (or `t_end`). Gravity is not applied here.
pub fn preintegrate(samples: &[ImuSample], bias: &ImuBias, noise: &ImuNoise, t_end: f64) -> Result<Preintegrated> {
    let first = samples.first().ok_or(Error::Empty("IMU buffer"))?;
    for (i, w) in samples.windows(2).enumerate() {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(Error::NonMonotone { index: i + 1 });
        }
    }
    let last = samples.last().unwrap();
    if !(t_end > last.timestamp) {
        return Err(Error::NonMonotone { index: samples.len() });
    }
    let mut out = Preintegrated::identity(*bias);
    let mut t = first.timestamp;
    for (i, s) in samples.iter().enumerate() {
        let next = samples.get(i + 1).map_or(t_end, |n| n.timestamp);
        out.integrate(&s.gyro, &s.accel, next - t, noise);
        t = next;
    }
    out.delta_r = crate::geometry::renormalize(&out.delta_r);
    Ok(out)
}
