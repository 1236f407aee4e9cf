//! Reference trajectories, estimate bridging, Frenet-frame PID tracking, inverse
//! kinematics to wheel speeds, and bounded non-periodic oscillation shaping.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DriveParams, WheelCommand};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, yaw_of, RigidTransform};

pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Two tangent circles of 1 m diameter, upper one counter-clockwise first.
    Figure8,
    /// Circle of radius 1 m about the origin.
    Circle,
    /// Ellipse with 4 m and 2 m axes.
    Oval,
    /// Straight segment of configurable length, then hold at its end.
    Line,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "figure8" => Ok(Self::Figure8),
            "circle" => Ok(Self::Circle),
            "oval" => Ok(Self::Oval),
            "line" => Ok(Self::Line),
            _ => Err(Error::Unknown { what: "trajectory kind", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    pub kind: TrajectoryKind,
    /// Path speed (m/s).
    pub speed: f64,
    /// World position of the trajectory's local origin.
    pub origin: [f64; 2],
    /// Rotation of the trajectory about the vertical (deg).
    pub yaw_deg: f64,
    /// Segment length for `line` (m).
    pub length: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self { kind: TrajectoryKind::Figure8, speed: 0.5, origin: [0.0, 0.0], yaw_deg: 0.0, length: 10.0 }
    }
}

/// Desired planar state with feed-forward twist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceState {
    pub position: Vector2<f64>,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
}

/// Planar pose used by the controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        Self { x: t.translation.x, y: t.translation.y, heading: yaw_of(&t.rotation) }
    }
}

const FIG8_RADIUS: f64 = 0.5;
const CIRCLE_RADIUS: f64 = 1.0;
const OVAL_AXES: (f64, f64) = (2.0, 1.0);
const OVAL_TABLE: usize = 4096;

#[derive(Clone, Debug)]
pub struct ReferenceTrajectory {
    pub params: TrajectoryParams,
    lap: f64,
    // Cumulative arc length at uniformly spaced ellipse parameters.
    oval_table: Vec<f64>,
}

impl ReferenceTrajectory {
    pub fn new(params: TrajectoryParams) -> Result<Self> {
        if !(params.speed > 0.0 && params.speed.is_finite()) {
            return Err(Error::invalid("trajectory.speed", "must be > 0"));
        }
        if params.kind == TrajectoryKind::Line && !(params.length > 0.0) {
            return Err(Error::invalid("trajectory.length", "must be > 0"));
        }
        let mut oval_table = Vec::new();
        let lap = match params.kind {
            TrajectoryKind::Figure8 => 2.0 * TAU * FIG8_RADIUS,
            TrajectoryKind::Circle => TAU * CIRCLE_RADIUS,
            TrajectoryKind::Line => params.length,
            TrajectoryKind::Oval => {
                oval_table = oval_arc_table();
                *oval_table.last().unwrap()
            }
        };
        Ok(Self { params, lap, oval_table })
    }

    /// Path length of one lap (or of the segment for `line`).
    pub fn lap_length(&self) -> f64 {
        self.lap
    }

    pub fn lap_time(&self) -> f64 {
        self.lap / self.params.speed
    }

    pub fn state(&self, t: f64) -> ReferenceState {
        let v = self.params.speed;
        let travelled = v * t.max(0.0);
        let (local, heading, v, omega) = match self.params.kind {
            TrajectoryKind::Figure8 => {
                let s = travelled % self.lap;
                let r = FIG8_RADIUS;
                let half = PI * 2.0 * r;
                if s < half {
                    let a = s / r;
                    (Vector2::new(r * a.sin(), r - r * a.cos()), a, v, v / r)
                } else {
                    let a = (s - half) / r;
                    (Vector2::new(r * a.sin(), -r + r * a.cos()), -a, v, -v / r)
                }
            }
            TrajectoryKind::Circle => {
                let a = (travelled % self.lap) / CIRCLE_RADIUS;
                (Vector2::new(a.cos(), a.sin()) * CIRCLE_RADIUS, a + PI / 2.0, v, v / CIRCLE_RADIUS)
            }
            TrajectoryKind::Line => {
                if travelled >= self.lap {
                    (Vector2::new(self.lap, 0.0), 0.0, 0.0, 0.0)
                } else {
                    (Vector2::new(travelled, 0.0), 0.0, v, 0.0)
                }
            }
            TrajectoryKind::Oval => {
                let phi = self.oval_parameter(travelled % self.lap);
                let (a, b) = OVAL_AXES;
                let (s, c) = phi.sin_cos();
                let speed_phi = (a * a * s * s + b * b * c * c).sqrt();
                let curvature = a * b / speed_phi.powi(3);
                (Vector2::new(a * c, b * s), (b * c).atan2(-a * s), v, v * curvature)
            }
        };
        let yaw = self.params.yaw_deg.to_radians();
        let (sy, cy) = yaw.sin_cos();
        let position = Vector2::new(self.params.origin[0] + cy * local.x - sy * local.y, self.params.origin[1] + sy * local.x + cy * local.y);
        ReferenceState { position, heading: wrap_angle(heading + yaw), v, omega }
    }

    fn oval_parameter(&self, s: f64) -> f64 {
        let table = &self.oval_table;
        let i = table.partition_point(|&x| x <= s).clamp(1, table.len() - 1);
        let (s0, s1) = (table[i - 1], table[i]);
        let frac = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
        TAU * ((i - 1) as f64 + frac) / (table.len() - 1) as f64
    }
}

fn oval_arc_table() -> Vec<f64> {
    let (a, b) = OVAL_AXES;
    let speed = |phi: f64| (a * a * phi.sin().powi(2) + b * b * phi.cos().powi(2)).sqrt();
    let h = TAU / OVAL_TABLE as f64;
    let mut table = Vec::with_capacity(OVAL_TABLE + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for i in 0..OVAL_TABLE {
        let p = i as f64 * h;
        // Simpson's rule on each cell.
        acc += h / 6.0 * (speed(p) + 4.0 * speed(p + 0.5 * h) + speed(p + h));
        table.push(acc);
    }
    table
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeMode {
    Hold,
    Interpolate,
}

/// Turns 10 Hz estimates into a 100 Hz controller input.
#[derive(Clone, Debug)]
pub struct EstimateBridge {
    pub mode: BridgeMode,
    last: Option<(f64, Pose2)>,
    prev: Option<(f64, Pose2)>,
}

impl EstimateBridge {
    pub fn new(mode: BridgeMode) -> Self {
        Self { mode, last: None, prev: None }
    }

    pub fn push(&mut self, t: f64, pose: Pose2) {
        self.prev = self.last.replace((t, pose));
    }

    /// Pose for control at time `t`; `None` until the first estimate arrives.
    pub fn at(&self, t: f64) -> Option<Pose2> {
        let (t1, p1) = self.last?;
        match (self.mode, self.prev) {
            (BridgeMode::Interpolate, Some((t0, p0))) if t1 > t0 => {
                let k = (t - t0) / (t1 - t0);
                let dh = wrap_angle(p1.heading - p0.heading);
                Some(Pose2::new(p0.x + k * (p1.x - p0.x), p0.y + k * (p1.y - p0.y), wrap_angle(p0.heading + k * dh)))
            }
            _ => Some(p1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the integral state.
    pub integral_limit: f64,
    /// Bound on the PID output (excluding feed-forward).
    pub output_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 1.0, ki: 0.0, kd: 0.0, integral_limit: 1.0, output_limit: 1.0 }
    }
}

impl PidGains {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.kp >= 0.0 && self.ki >= 0.0 && self.kd >= 0.0) {
            return Err(Error::invalid(field, "gains must be >= 0"));
        }
        if !(self.integral_limit > 0.0 && self.output_limit > 0.0) {
            return Err(Error::invalid(field, "limits must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    integral: f64,
    prev_error: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains) -> Self {
        Self { gains, integral: 0.0, prev_error: None }
    }

    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        let g = &self.gains;
        self.integral = (self.integral + error * dt).clamp(-g.integral_limit, g.integral_limit);
        let derivative = self.prev_error.map_or(0.0, |p| (error - p) / dt);
        self.prev_error = Some(error);
        (g.kp * error + g.ki * self.integral + g.kd * derivative).clamp(-g.output_limit, g.output_limit)
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }
}

/// Reference-minus-current error in the reference's path frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingError {
    pub along: f64,
    pub cross: f64,
    pub heading: f64,
}

pub fn frenet_error(reference: &ReferenceState, current: &Pose2) -> TrackingError {
    let (s, c) = reference.heading.sin_cos();
    let (dx, dy) = (reference.position.x - current.x, reference.position.y - current.y);
    TrackingError { along: c * dx + s * dy, cross: -s * dx + c * dy, heading: wrap_angle(reference.heading - current.heading) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    pub longitudinal: PidGains,
    pub heading: PidGains,
    /// Weight of cross-track error in the heading channel (rad/m).
    pub cross_track_gain: f64,
    pub max_speed: f64,
    pub max_yaw_rate: f64,
    pub bridge: BridgeMode,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            longitudinal: PidGains { kp: 1.2, ki: 0.1, kd: 0.05, integral_limit: 0.5, output_limit: 0.5 },
            heading: PidGains { kp: 2.0, ki: 0.0, kd: 0.1, integral_limit: 0.5, output_limit: 3.0 },
            cross_track_gain: 2.0,
            max_speed: 1.0,
            max_yaw_rate: 4.0,
            bridge: BridgeMode::Interpolate,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        self.longitudinal.validate("control.longitudinal")?;
        self.heading.validate("control.heading")?;
        if !(self.cross_track_gain >= 0.0) {
            return Err(Error::invalid("control.cross_track_gain", "must be >= 0"));
        }
        if !(self.max_speed > 0.0 && self.max_yaw_rate > 0.0) {
            return Err(Error::invalid("control.max_speed", "speed and yaw-rate limits must be > 0"));
        }
        Ok(())
    }
}

/// PID on along-track error (speed) and on heading plus weighted cross-track error (yaw rate).
#[derive(Clone, Debug)]
pub struct TrackingController {
    pub params: ControllerParams,
    longitudinal: Pid,
    heading: Pid,
}

impl TrackingController {
    pub fn new(params: ControllerParams) -> Self {
        Self { longitudinal: Pid::new(params.longitudinal), heading: Pid::new(params.heading), params }
    }

    /// Returns `(v_cmd, ω_cmd)` for one control tick.
    pub fn step(&mut self, reference: &ReferenceState, current: &Pose2, dt: f64) -> (f64, f64) {
        let e = frenet_error(reference, current);
        let v = reference.v + self.longitudinal.step(e.along, dt);
        let w = reference.omega + self.heading.step(e.heading + self.params.cross_track_gain * e.cross, dt);
        (v.clamp(-self.params.max_speed, self.params.max_speed), w.clamp(-self.params.max_yaw_rate, self.params.max_yaw_rate))
    }
}

/// Inverse differential-drive kinematics, saturated at the drive's wheel limit.
pub fn twist_to_wheels(v: f64, omega: f64, p: &DriveParams) -> WheelCommand {
    let half = 0.5 * omega * p.track_width;
    WheelCommand::new((v - half) / p.wheel_radius, (v + half) / p.wheel_radius).saturated(p.max_wheel_speed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillationParams {
    pub enabled: bool,
    /// Peak perturbation A_max on each wheel (rad/s).
    pub amplitude: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Default for OscillationParams {
    fn default() -> Self {
        Self { enabled: true, amplitude: 3.0, f1: 0.7, f2: 0.7 * GOLDEN_RATIO }
    }
}

impl OscillationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) {
            return Err(Error::invalid("oscillation.amplitude", "must be >= 0"));
        }
        if !(self.f1 > 0.0 && self.f2 > 0.0) {
            return Err(Error::invalid("oscillation.f1", "frequencies must be > 0"));
        }
        // A rational ratio with small terms would make the perturbation periodic.
        let ratio = self.f1 / self.f2;
        for q in 1..=20u32 {
            let p = (ratio * q as f64).round();
            if (ratio * q as f64 - p).abs() < 1e-9 {
                return Err(Error::invalid("oscillation.f2", format!("f1/f2 = {p}/{q} is rational")));
            }
        }
        Ok(())
    }
}

/// `δ(t) = A [sin(2π f₁ t) + sin(2π f₂ t)] / 2`, zero when disabled.
pub fn oscillation(t: f64, p: &OscillationParams) -> f64 {
    if !p.enabled {
        return 0.0;
    }
    0.5 * p.amplitude * ((TAU * p.f1 * t).sin() + (TAU * p.f2 * t).sin())
}

/// Adds the perturbation to both wheels and re-saturates.
pub fn shape_oscillation(cmd: WheelCommand, t: f64, p: &OscillationParams, max_wheel_speed: f64) -> WheelCommand {
    if !p.enabled {
        return cmd;
    }
    let d = oscillation(t, p);
    WheelCommand::new(cmd.left + d, cmd.right + d).saturated(max_wheel_speed)
}
