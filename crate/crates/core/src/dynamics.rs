//! Internal differential-drive kinematics, no-slip drive–shell coupling, and the
//! rocking dynamics of the LiDAR-carrying shell frame.
//!
//! Model summary:
//! - Wheel speeds follow the commanded speeds through a first-order motor lag.
//! - The drive unit faces the rear of the shell frame (`R_OI = Rz(π)` at rest), so
//!   the literal coupling `v_O = −R_OI v_I` moves the shell along its own +x for
//!   positive wheel speeds. Yaw follows the drive's yaw rate kinematically.
//! - Translation is slip-free along the ground tangent plane; the shell's rolling
//!   spin obeys `ω = (1/R_s) n × v` with `n` the contact normal.
//! - The drive is a point mass at radius `l` that swings inside the shell as a damped
//!   pendulum forced by the wheel acceleration. It sets the center-of-mass offset
//!   `c_O = μ_d p_OI`, whose gravity torque rocks the shell frame in pitch and roll.
//! - The rocking mode integrates `I ω̇ = τ_g + τ_d − ω × Iω` with an energy-consistent
//!   midpoint (discrete-gradient) step and an exp map rotation update.

use serde::{Deserialize, Serialize};

use crate::environment::Scene;
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, log_so3, renormalize, rot_x, rot_y, rot_z, yaw_of, Frame, Mat3, RigidTransform, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveParams {
    /// Wheel radius r (m).
    pub wheel_radius: f64,
    /// Track width d (m).
    pub track_width: f64,
    /// Fraction of the total mass carried by the drive unit.
    pub mass_fraction: f64,
    /// Distance l of the drive unit from the shell center (m).
    pub offset_radius: f64,
    /// Wheel speed saturation (rad/s).
    pub max_wheel_speed: f64,
    /// Motor lag time constant (s). Zero makes wheel speeds follow commands exactly.
    pub motor_time_constant: f64,
    /// Natural frequency of the drive's swing inside the shell (rad/s).
    pub swing_frequency: f64,
    pub swing_damping_ratio: f64,
}

impl Default for DriveParams {
    fn default() -> Self {
        Self {
            wheel_radius: 0.05,
            track_width: 0.20,
            mass_fraction: 0.5,
            offset_radius: 0.08,
            max_wheel_speed: 25.0,
            motor_time_constant: 0.15,
            swing_frequency: 30.0,
            swing_damping_ratio: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShellParams {
    /// Shell radius R_s (m).
    pub radius: f64,
    /// Total mass m (kg).
    pub mass: f64,
    /// Rotational inertia about the shell center, row-major (kg·m²).
    pub inertia: [[f64; 3]; 3],
    /// Viscous damping of the rocking mode k_d (N·m·s/rad).
    pub damping: f64,
    /// Torque the drive needs per rad/s of rolling spin to overcome rolling
    /// resistance (N·m·s/rad). Its reaction tilts the shell at constant speed.
    pub rolling_resistance: f64,
    /// Inertia of the outer rolling shell about its own center (kg·m²). With the
    /// total mass at the contact radius it sets the drive torque needed to spin
    /// the shell up, whose reaction pitches the carrier.
    pub rolling_inertia: f64,
    /// World gravity (m/s²).
    pub gravity: [f64; 3],
}

impl Default for ShellParams {
    fn default() -> Self {
        Self {
            radius: 0.125,
            mass: 1.8,
            inertia: [[0.012, 0.0, 0.0], [0.0, 0.012, 0.0], [0.0, 0.0, 0.012]],
            damping: 0.05,
            rolling_resistance: 0.006,
            rolling_inertia: 0.006,
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

impl ShellParams {
    pub fn inertia_matrix(&self) -> Mat3 {
        let i = &self.inertia;
        Mat3::new(i[0][0], i[0][1], i[0][2], i[1][0], i[1][1], i[1][2], i[2][0], i[2][1], i[2][2])
    }

    pub fn gravity_world(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub drive: DriveParams,
    pub shell: ShellParams,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let d = &self.drive;
        let s = &self.shell;
        let check = |ok: bool, field: &str, reason: &str| if ok { Ok(()) } else { Err(Error::invalid(field, reason)) };
        check(d.wheel_radius > 0.0, "drive.wheel_radius", "must be > 0")?;
        check(d.track_width > 0.0, "drive.track_width", "must be > 0")?;
        check(d.mass_fraction > 0.0 && d.mass_fraction < 1.0, "drive.mass_fraction", "must be in (0, 1)")?;
        check(d.offset_radius >= 0.0 && d.offset_radius < s.radius, "drive.offset_radius", "must be in [0, shell.radius)")?;
        check(d.max_wheel_speed > 0.0, "drive.max_wheel_speed", "must be > 0")?;
        check(d.motor_time_constant >= 0.0, "drive.motor_time_constant", "must be >= 0")?;
        check(d.swing_frequency > 0.0, "drive.swing_frequency", "must be > 0")?;
        check(d.swing_damping_ratio >= 0.0, "drive.swing_damping_ratio", "must be >= 0")?;
        check(s.radius > 0.0, "shell.radius", "must be > 0")?;
        check(s.mass > 0.0, "shell.mass", "must be > 0")?;
        check(s.damping >= 0.0, "shell.damping", "must be >= 0")?;
        check(s.rolling_resistance >= 0.0, "shell.rolling_resistance", "must be >= 0")?;
        check(s.rolling_inertia >= 0.0, "shell.rolling_inertia", "must be >= 0")?;
        let i = s.inertia_matrix();
        let symmetric = (i - i.transpose()).norm() <= 1e-12 * i.norm();
        let pd = i.cholesky().is_some();
        check(symmetric && pd, "shell.inertia", "must be symmetric positive definite")?;
        Ok(())
    }
}

/// Left/right wheel angular velocities (rad/s).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WheelCommand {
    pub left: f64,
    pub right: f64,
}

impl WheelCommand {
    pub fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }

    pub fn saturated(self, max: f64) -> Self {
        Self { left: self.left.clamp(-max, max), right: self.right.clamp(-max, max) }
    }

    pub fn mirrored(self) -> Self {
        Self { left: self.right, right: self.left }
    }
}

/// How the shell attitude evolves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttitudeMode {
    /// Full rocking dynamics.
    Dynamic,
    /// Rocking frozen level; only yaw changes. Used to emulate rigid chassis.
    FrozenLevel,
}

/// Anything that can report where the shell rests.
pub trait Terrain {
    /// Height of the shell center and contact normal at horizontal position (x, y).
    fn support(&self, x: f64, y: f64, radius: f64) -> Option<(f64, Vec3)>;
}

impl Terrain for Scene {
    fn support(&self, x: f64, y: f64, radius: f64) -> Option<(f64, Vec3)> {
        self.ground_support(x, y, radius)
    }
}

/// Infinite horizontal plane at z = 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlatGround;

impl Terrain for FlatGround {
    fn support(&self, _x: f64, _y: f64, radius: f64) -> Option<(f64, Vec3)> {
        Some((radius, Vec3::z()))
    }
}

/// Full simulator state.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    /// Shell pose T_WO.
    pub pose: RigidTransform,
    /// Shell-center velocity in the world frame (m/s).
    pub velocity: Vec3,
    /// Shell-frame angular velocity ω_O expressed in O (rad/s).
    pub omega: Vec3,
    /// Drive pose inside the shell T_OI.
    pub drive: RigidTransform,
    pub time: f64,
    /// Heading of the drive about the world vertical (rad).
    pub heading: f64,
    /// Rocking rotation R_HO between the level heading frame and the shell frame.
    pub tilt: Mat3,
    /// Rocking angular velocity in O (rad/s).
    pub tilt_rate: Vec3,
    /// Actual wheel speeds after the motor lag (rad/s).
    pub wheel_speeds: WheelCommand,
    /// Drive swing angles (pitch-plane, roll-plane) and their rates.
    pub swing: [f64; 2],
    pub swing_rate: [f64; 2],
    /// Rolling spin of the outer surface in the world frame (rad/s).
    pub rolling_omega: Vec3,
    /// Shell-center acceleration over the last step, world frame (m/s²).
    pub acceleration: Vec3,
    /// Contact normal at the current position.
    pub ground_normal: Vec3,
}

impl SimState {
    /// At rest on the terrain at (x, y) with the given heading.
    pub fn at_rest(x: f64, y: f64, heading: f64, params: &VehicleParams, terrain: &impl Terrain) -> Self {
        let r = params.shell.radius;
        let (z, n) = terrain.support(x, y, r).unwrap_or((r, Vec3::z()));
        let rotation = rot_z(heading);
        Self {
            pose: RigidTransform::new(rotation, Vec3::new(x, y, z), Frame::Shell, Frame::World),
            velocity: Vec3::zeros(),
            omega: Vec3::zeros(),
            drive: drive_pose(0.0, 0.0, params.drive.offset_radius),
            time: 0.0,
            heading,
            tilt: Mat3::identity(),
            tilt_rate: Vec3::zeros(),
            wheel_speeds: WheelCommand::default(),
            swing: [0.0; 2],
            swing_rate: [0.0; 2],
            rolling_omega: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            ground_normal: n,
        }
    }

    /// Pitch of the shell frame relative to the level heading frame (rad). Positive
    /// rotates the shell's +x axis downward.
    pub fn pitch(&self) -> f64 {
        (-self.tilt[(2, 0)]).clamp(-1.0, 1.0).asin()
    }

    /// Roll of the shell frame relative to the level heading frame (rad).
    pub fn roll(&self) -> f64 {
        self.tilt[(2, 1)].atan2(self.tilt[(2, 2)])
    }

    /// Forward speed implied by the actual wheel speeds (m/s).
    pub fn forward_speed(&self, params: &DriveParams) -> f64 {
        0.5 * params.wheel_radius * (self.wheel_speeds.left + self.wheel_speeds.right)
    }
}

/// Drive pose inside the shell for swing angles (pitch-plane, roll-plane).
pub fn drive_pose(swing_pitch: f64, swing_roll: f64, offset_radius: f64) -> RigidTransform {
    let swing = rot_y(swing_pitch) * rot_x(swing_roll);
    RigidTransform::new(swing * rot_z(std::f64::consts::PI), swing * Vec3::new(0.0, 0.0, -offset_radius), Frame::Drive, Frame::Shell)
}

/// Drive-frame twist from wheel speeds: `v_I = (r/2 (u_L + u_R), 0, 0)`,
/// `ω_I = (0, 0, r/d (u_R − u_L))`.
pub fn wheel_to_body_twist(cmd: WheelCommand, p: &DriveParams) -> (Vec3, Vec3) {
    let r = p.wheel_radius;
    let v = Vec3::new(0.5 * r * (cmd.left + cmd.right), 0.0, 0.0);
    let w = Vec3::new(0.0, 0.0, r / p.track_width * (cmd.right - cmd.left));
    (v, w)
}

/// Shell velocity induced by the drive rolling on the inner surface: `v_O = −R_OI v_I`.
pub fn shell_velocity(drive: &RigidTransform, v_drive: &Vec3) -> Vec3 {
    -(drive.rotation * v_drive)
}

/// Rolling-constraint spin `(1/R_s) (e_z × v_O)`.
pub fn rolling_omega(v: &Vec3, radius: f64) -> Vec3 {
    rolling_omega_about(&Vec3::z(), v, radius)
}

/// Rolling-constraint spin about an arbitrary contact normal.
pub fn rolling_omega_about(normal: &Vec3, v: &Vec3, radius: f64) -> Vec3 {
    normal.cross(v) / radius
}

/// Mass-fraction-weighted drive position: `c_O = μ_d p_OI`.
pub fn com_offset(drive: &RigidTransform, p: &DriveParams) -> Vec3 {
    drive.translation * p.mass_fraction
}

/// Gravity torque `c_O × (m g_O)`.
pub fn gravity_torque(com: &Vec3, mass: f64, gravity_shell: &Vec3) -> Vec3 {
    com.cross(&(gravity_shell * mass))
}

/// Kinetic plus potential energy of the rocking mode.
pub fn pendulum_energy(state: &SimState, params: &VehicleParams) -> f64 {
    let i = params.shell.inertia_matrix();
    let c = com_offset(&state.drive, &params.drive);
    let kinetic = 0.5 * state.tilt_rate.dot(&(i * state.tilt_rate));
    kinetic + rocking_potential(&state.tilt, &c, params)
}

fn rocking_potential(tilt: &Mat3, com: &Vec3, params: &VehicleParams) -> f64 {
    // Yaw does not change the height of the offset mass, so R_HO suffices.
    -params.shell.mass * (tilt * com).dot(&params.shell.gravity_world())
}

/// Norm of the rolling-constraint residual `ω_roll − (1/R_s) n × v`.
pub fn rolling_residual(state: &SimState, params: &VehicleParams) -> f64 {
    (state.rolling_omega - rolling_omega_about(&state.ground_normal, &state.velocity, params.shell.radius)).norm()
}

fn check_finite(time: f64, quantity: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { time, quantity })
    }
}

/// Advances the simulation by `dt` seconds.
pub fn step(state: &SimState, cmd: WheelCommand, dt: f64, params: &VehicleParams, terrain: &impl Terrain, mode: AttitudeMode) -> Result<SimState> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::invalid("dt", format!("{dt} outside (0, 0.01]")));
    }
    check_finite(state.time, "wheel command", &[cmd.left, cmd.right])?;
    let dp = &params.drive;
    let sp = &params.shell;
    let cmd = cmd.saturated(dp.max_wheel_speed);

    // Motor lag.
    let decay = if dp.motor_time_constant > 0.0 { (-dt / dp.motor_time_constant).exp() } else { 0.0 };
    let lag = |target: f64, current: f64| target + (current - target) * decay;
    let wheels = WheelCommand::new(lag(cmd.left, state.wheel_speeds.left), lag(cmd.right, state.wheel_speeds.right));
    let wheel_accel = WheelCommand::new((wheels.left - state.wheel_speeds.left) / dt, (wheels.right - state.wheel_speeds.right) / dt);

    // Drive twist and heading.
    let (v_drive, w_drive) = wheel_to_body_twist(wheels, dp);
    let (a_drive, _) = wheel_to_body_twist(wheel_accel, dp);
    let level_drive = drive_pose(0.0, 0.0, dp.offset_radius);
    let v_level = shell_velocity(&level_drive, &v_drive);
    let yaw_rate = (level_drive.rotation * w_drive).z;
    let heading = state.heading + yaw_rate * dt;

    // Slip-free translation on the ground tangent plane.
    let n = state.ground_normal;
    let h = Vec3::new(heading.cos(), heading.sin(), 0.0);
    let fwd = (h - n * h.dot(&n)).normalize();
    let lateral = n.cross(&fwd);
    let velocity = fwd * v_level.x + lateral * v_level.y;
    let mut position = state.pose.translation + velocity * dt;
    let normal = match terrain.support(position.x, position.y, sp.radius) {
        Some((z, n)) => {
            position.z = z;
            n
        }
        None => n,
    };
    let acceleration = (velocity - state.velocity) / dt;
    let rolling = rolling_omega_about(&normal, &velocity, sp.radius);

    // Drive swing, forced by longitudinal and centripetal acceleration.
    let forward_accel = a_drive.x;
    let lateral_accel = v_drive.x * yaw_rate;
    let (ws, zeta, l) = (dp.swing_frequency, dp.swing_damping_ratio, dp.offset_radius.max(1e-6));
    let forcing = [forward_accel / l, -lateral_accel / l];
    let mut swing = state.swing;
    let mut swing_rate = state.swing_rate;
    for k in 0..2 {
        let acc = -ws * ws * swing[k].sin() - 2.0 * zeta * ws * swing_rate[k] + forcing[k] * swing[k].cos();
        swing_rate[k] += acc * dt;
        swing[k] += swing_rate[k] * dt;
    }
    let drive = drive_pose(swing[0], swing[1], dp.offset_radius);

    let (tilt, tilt_rate) = match mode {
        AttitudeMode::FrozenLevel => (Mat3::identity(), Vec3::zeros()),
        AttitudeMode::Dynamic => {
            let com = com_offset(&drive, dp);
            let world_to_shell = (rot_z(heading) * state.tilt).transpose();
            // Drive reaction: inertial load of the offset mass, plus the reaction to the
            // torque that spins the shell up about its contact point and overcomes
            // rolling resistance.
            let spin_up = (rolling - state.rolling_omega) / dt * (sp.rolling_inertia + sp.mass * sp.radius * sp.radius);
            let reaction = -com.cross(&(world_to_shell * acceleration * sp.mass)) - world_to_shell * (spin_up + rolling * sp.rolling_resistance);
            let (tilt, rate) = rocking_step(&state.tilt, &state.tilt_rate, &com, &reaction, dt, params);
            // Heading is set by the drive; strip the vertical twist that coning of the
            // rocking mode accumulates. Gravity is vertical, so the potential is unchanged.
            (renormalize(&(rot_z(-yaw_of(&tilt)) * tilt)), rate)
        }
    };

    let rotation = rot_z(heading) * tilt;
    // Mean body rate over the step, so integrating it reproduces the attitude exactly.
    let omega = log_so3(&(state.pose.rotation.transpose() * rotation)) / dt;
    let time = state.time + dt;
    check_finite(time, "position", position.as_slice())?;
    check_finite(time, "velocity", velocity.as_slice())?;
    check_finite(time, "rocking rate", tilt_rate.as_slice())?;
    check_finite(time, "orientation", rotation.as_slice())?;
    check_finite(time, "drive swing", &[swing[0], swing[1], swing_rate[0], swing_rate[1]])?;

    Ok(SimState {
        pose: RigidTransform::new(rotation, position, Frame::Shell, Frame::World),
        velocity,
        omega,
        drive,
        time,
        heading,
        tilt,
        tilt_rate,
        wheel_speeds: wheels,
        swing,
        swing_rate,
        rolling_omega: rolling,
        acceleration,
        ground_normal: normal,
    })
}

/// One energy-consistent midpoint step of the rocking mode. The gravity torque is
/// replaced by its discrete gradient so that, absent external torque, the step
/// changes the pendulum energy by exactly `−dt k_d |ω̄|²`.
fn rocking_step(tilt: &Mat3, rate: &Vec3, com: &Vec3, external: &Vec3, dt: f64, params: &VehicleParams) -> (Mat3, Vec3) {
    let sp = &params.shell;
    let inertia = sp.inertia_matrix();
    let inertia_inv = inertia.try_inverse().expect("inertia validated as SPD");
    let g = sp.gravity_world();
    let u0 = rocking_potential(tilt, com, params);
    let mut next = *rate;
    for _ in 0..50 {
        let mid = (rate + next) * 0.5;
        let new_tilt = tilt * exp_so3(&(mid * dt));
        let mid_tilt = tilt * exp_so3(&(mid * (0.5 * dt)));
        let tau_mid = gravity_torque(com, sp.mass, &(mid_tilt.transpose() * g));
        let m2 = mid.norm_squared();
        let tau = if m2 > 1e-24 {
            let du = rocking_potential(&new_tilt, com, params) - u0;
            tau_mid + mid * ((-du / dt - mid.dot(&tau_mid)) / m2)
        } else {
            tau_mid
        };
        let total = tau + external - mid * sp.damping - mid.cross(&(inertia * mid));
        let candidate = rate + inertia_inv * total * dt;
        let change = (candidate - next).norm();
        next = candidate;
        if change <= 1e-15 * (1.0 + next.norm()) {
            break;
        }
    }
    let mid = (rate + next) * 0.5;
    (renormalize(&(tilt * exp_so3(&(mid * dt)))), next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn twist_examples() {
        let p = DriveParams::default();
        let (v, w) = wheel_to_body_twist(WheelCommand::new(0.0, 0.0), &p);
        assert_eq!((v, w), (Vec3::zeros(), Vec3::zeros()));
        let (v, w) = wheel_to_body_twist(WheelCommand::new(10.0, 10.0), &p);
        assert!((v - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-15 && w.norm() == 0.0);
        let (v, w) = wheel_to_body_twist(WheelCommand::new(-10.0, 10.0), &p);
        assert!(v.norm() == 0.0 && (w - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn shell_velocity_examples() {
        let id = RigidTransform::identity(Frame::Drive, Frame::Shell);
        assert_eq!(shell_velocity(&id, &Vec3::new(0.5, 0.0, 0.0)), Vec3::new(-0.5, 0.0, 0.0));
        assert_eq!(shell_velocity(&id, &Vec3::zeros()), Vec3::zeros());
        let r = exp_so3(&Vec3::new(0.3, -1.2, 0.7));
        let t = RigidTransform::new(r, Vec3::zeros(), Frame::Drive, Frame::Shell);
        let v = Vec3::new(0.2, -0.4, 1.1);
        let want = Vec3::new(
            -(r[(0, 0)] * v.x + r[(0, 1)] * v.y + r[(0, 2)] * v.z),
            -(r[(1, 0)] * v.x + r[(1, 1)] * v.y + r[(1, 2)] * v.z),
            -(r[(2, 0)] * v.x + r[(2, 1)] * v.y + r[(2, 2)] * v.z),
        );
        assert!((shell_velocity(&t, &v) - want).norm() < 1e-12);
    }

    #[test]
    fn rolling_omega_examples() {
        assert!((rolling_omega(&Vec3::new(0.5, 0.0, 0.0), 0.125) - Vec3::new(0.0, 4.0, 0.0)).norm() < 1e-12);
        assert_eq!(rolling_omega(&Vec3::zeros(), 0.125), Vec3::zeros());
        let v = Vec3::new(0.3, -0.7, 0.1);
        // e_z × v = (−v_y, v_x, 0)
        let want = Vec3::new(-v.y, v.x, 0.0) / 0.2;
        assert!((rolling_omega(&v, 0.2) - want).norm() < 1e-12);
    }

    #[test]
    fn com_offset_examples() {
        let mut p = DriveParams::default();
        let rest = drive_pose(0.0, 0.0, 0.08);
        assert!((com_offset(&rest, &p) - Vec3::new(0.0, 0.0, -0.04)).norm() < 1e-15);
        let displaced = RigidTransform::new(Mat3::identity(), Vec3::new(0.02, 0.0, -0.077), Frame::Drive, Frame::Shell);
        assert!((com_offset(&displaced, &p) - Vec3::new(0.01, 0.0, -0.0385)).norm() < 1e-15);
        p.mass_fraction = 0.0;
        assert_eq!(com_offset(&rest, &p), Vec3::zeros());
    }

    #[test]
    fn gravity_torque_examples() {
        let g = Vec3::new(0.0, 0.0, -9.81);
        assert_eq!(gravity_torque(&Vec3::new(0.0, 0.0, -0.04), 1.8, &g), Vec3::zeros());
        assert_eq!(gravity_torque(&Vec3::zeros(), 1.8, &g), Vec3::zeros());
        let t = gravity_torque(&Vec3::new(0.01, 0.0, -0.05), 1.8, &g);
        assert!((t - Vec3::new(0.0, 0.17658, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rest_is_equilibrium() {
        let p = params();
        let mut s = SimState::at_rest(0.0, 0.0, 0.3, &p, &FlatGround);
        let start = s.clone();
        for _ in 0..2000 {
            s = step(&s, WheelCommand::default(), 1e-3, &p, &FlatGround, AttitudeMode::Dynamic).unwrap();
        }
        assert!((s.time - 2.0).abs() < 1e-9);
        s.time = start.time;
        assert_eq!(s, start);
    }

    #[test]
    fn rejects_bad_dt_and_nonfinite() {
        let p = params();
        let s = SimState::at_rest(0.0, 0.0, 0.0, &p, &FlatGround);
        assert!(step(&s, WheelCommand::default(), 0.0, &p, &FlatGround, AttitudeMode::Dynamic).is_err());
        assert!(step(&s, WheelCommand::default(), 0.02, &p, &FlatGround, AttitudeMode::Dynamic).is_err());
        let mut bad = s.clone();
        bad.tilt_rate.x = f64::NAN;
        let err = step(&bad, WheelCommand::default(), 1e-3, &p, &FlatGround, AttitudeMode::Dynamic).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn constant_command_reaches_analytic_steady_state() {
        let p = params();
        let mut s = SimState::at_rest(0.0, 0.0, 0.0, &p, &FlatGround);
        let u = 10.0;
        for _ in 0..20_000 {
            s = step(&s, WheelCommand::new(u, u), 1e-3, &p, &FlatGround, AttitudeMode::Dynamic).unwrap();
        }
        let v = p.drive.wheel_radius * u;
        assert!((s.velocity.norm() - v).abs() < 1e-9);
        // Torque balance: m g μ l sin θ = −k_rr v / R_s.
        let sp = &p.shell;
        let want = (-sp.rolling_resistance * v / sp.radius / (sp.mass * 9.81 * p.drive.mass_fraction * p.drive.offset_radius)).asin();
        assert!(want < 0.0);
        assert!((s.pitch() - want).abs() < 1e-6, "pitch {} want {}", s.pitch(), want);
    }

    #[test]
    fn validate_rejects_bad_params() {
        let mut p = params();
        assert!(p.validate().is_ok());
        p.drive.mass_fraction = 1.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.shell.inertia[0][0] = -1.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.drive.offset_radius = 0.2;
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_drag_energy_is_non_increasing() {
        let p = params();
        let mut s = SimState::at_rest(0.0, 0.0, 0.0, &p, &FlatGround);
        s.tilt = exp_so3(&Vec3::new(0.1, 0.25, 0.0));
        s.tilt_rate = Vec3::new(0.0, 0.0, 0.3);
        let mut e = pendulum_energy(&s, &p);
        for _ in 0..5000 {
            s = step(&s, WheelCommand::default(), 1e-3, &p, &FlatGround, AttitudeMode::Dynamic).unwrap();
            let next = pendulum_energy(&s, &p);
            assert!(next <= e + 1e-12 * e.abs().max(1.0), "energy rose {e} -> {next}");
            e = next;
        }
    }

    #[test]
    fn braking_pitch_opposes_speed_up_and_decays() {
        let p = params();
        let mut s = SimState::at_rest(0.0, 0.0, 0.0, &p, &FlatGround);
        let dt = 1e-3;
        let mut accel_peak: f64 = 0.0;
        for _ in 0..3000 {
            s = step(&s, WheelCommand::new(10.0, 10.0), dt, &p, &FlatGround, AttitudeMode::Dynamic).unwrap();
            if accel_peak.abs() < s.pitch().abs() {
                accel_peak = s.pitch();
            }
        }
        let mut pitch = Vec::new();
        for _ in 0..4000 {
            s = step(&s, WheelCommand::default(), dt, &p, &FlatGround, AttitudeMode::Dynamic).unwrap();
            pitch.push(s.pitch());
        }
        let brake_peak = pitch.iter().cloned().fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
        // Spinning the shell up pitches the carrier nose-up; braking pitches it nose-down.
        assert!(accel_peak < -0.02, "speed-up pitch {accel_peak}");
        assert!(brake_peak > 0.02, "braking pitch {brake_peak}");
        // Successive extrema of |pitch| shrink.
        let peaks: Vec<f64> = (1..pitch.len() - 1)
            .filter(|&i| pitch[i].abs() > pitch[i - 1].abs() && pitch[i].abs() >= pitch[i + 1].abs() && pitch[i].abs() > 1e-4)
            .map(|i| pitch[i].abs())
            .collect();
        assert!(peaks.len() >= 2, "{peaks:?}");
        assert!(peaks.windows(2).all(|w| w[1] < w[0]), "{peaks:?}");
        assert!(pitch.last().unwrap().abs() < 1e-3);
    }

    fn run(cmds: &[(f64, f64)], mode: AttitudeMode) -> Vec<SimState> {
        let p = params();
        let mut s = SimState::at_rest(0.0, 0.0, 0.0, &p, &FlatGround);
        let mut out = Vec::new();
        for &(l, r) in cmds {
            for _ in 0..50 {
                s = step(&s, WheelCommand::new(l, r), 1e-3, &p, &FlatGround, mode).unwrap();
                out.push(s.clone());
            }
        }
        out
    }

    use proptest::prelude::*;

    fn commands() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64), 1..40)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn invariants_hold_every_step(cmds in commands()) {
            let p = params();
            for s in run(&cmds, AttitudeMode::Dynamic) {
                let r = s.pose.rotation;
                prop_assert!((r.transpose() * r - Mat3::identity()).norm() <= 1e-9);
                prop_assert!(rolling_residual(&s, &p) <= 1e-6);
                prop_assert!(s.wheel_speeds.left.abs() <= p.drive.max_wheel_speed);
                prop_assert!(s.wheel_speeds.right.abs() <= p.drive.max_wheel_speed);
            }
        }

        #[test]
        fn mirrored_commands_mirror_the_trajectory(cmds in commands()) {
            let mirrored: Vec<_> = cmds.iter().map(|&(l, r)| (r, l)).collect();
            let a = run(&cmds, AttitudeMode::Dynamic);
            let b = run(&mirrored, AttitudeMode::Dynamic);
            for (sa, sb) in a.iter().zip(&b) {
                let (pa, pb) = (sa.pose.translation, sb.pose.translation);
                prop_assert!((pa.x - pb.x).abs() <= 1e-9 && (pa.y + pb.y).abs() <= 1e-9 && (pa.z - pb.z).abs() <= 1e-9);
                prop_assert!((sa.heading + sb.heading).abs() <= 1e-9);
                prop_assert!((sa.pitch() - sb.pitch()).abs() <= 1e-9 && (sa.roll() + sb.roll()).abs() <= 1e-9);
            }
        }

        #[test]
        fn stepping_is_deterministic(cmds in commands()) {
            prop_assert_eq!(run(&cmds, AttitudeMode::Dynamic), run(&cmds, AttitudeMode::Dynamic));
        }

        #[test]
        fn damped_free_rocking_never_gains_energy(tx in -0.4..0.4f64, ty in -0.4..0.4f64, w in -2.0..2.0f64) {
            let p = params();
            let mut s = SimState::at_rest(0.0, 0.0, 0.0, &p, &FlatGround);
            s.tilt = exp_so3(&Vec3::new(tx, ty, 0.0));
            s.tilt_rate = Vec3::new(w, -w * 0.5, 0.1);
            let mut e = pendulum_energy(&s, &p);
            for _ in 0..1500 {
                s = step(&s, WheelCommand::default(), 1e-3, &p, &FlatGround, AttitudeMode::Dynamic).unwrap();
                let next = pendulum_energy(&s, &p);
                prop_assert!(next <= e + 1e-12);
                e = next;
            }
        }
    }
}
