//! Experiment configuration: TOML sections per module, unknown keys rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{ControllerParams, OscillationParams, TrajectoryParams};
use crate::dynamics::VehicleParams;
use crate::environment::{build_scene, Primitive, Scene, SceneKind};
use crate::error::{Error, Result};
use crate::estimator::LioParams;
use crate::sensors::{ImuParams, LidarParams};

/// Sensor configuration emulating each platform on the same chassis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    FixedHorizontal,
    StaticTilt,
    ActiveRotation,
    PassiveExcitation,
}

impl BaselineMode {
    pub const ALL: [BaselineMode; 4] =
        [BaselineMode::FixedHorizontal, BaselineMode::StaticTilt, BaselineMode::ActiveRotation, BaselineMode::PassiveExcitation];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMode::FixedHorizontal => "fixed_horizontal",
            BaselineMode::StaticTilt => "static_tilt",
            BaselineMode::ActiveRotation => "active_rotation",
            BaselineMode::PassiveExcitation => "passive_excitation",
        }
    }
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineMode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Unknown { what: "baseline mode", name: s.into() })
    }
}

impl std::fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Source of the pose fed to the controller and used to build the map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    #[serde(alias = "gt")]
    GroundTruth,
    #[serde(alias = "lio")]
    EstimatorInLoop,
}

impl ControlMode {
    pub fn name(self) -> &'static str {
        match self {
            ControlMode::GroundTruth => "ground_truth",
            ControlMode::EstimatorInLoop => "estimator_in_loop",
        }
    }
}

impl FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" | "ground_truth" => Ok(ControlMode::GroundTruth),
            "lio" | "estimator_in_loop" => Ok(ControlMode::EstimatorInLoop),
            other => Err(Error::Unknown { what: "control mode", name: other.into() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub baseline: BaselineMode,
    pub control: ControlMode,
    /// Simulated time per repeat (s).
    pub duration: f64,
    pub repeats: u32,
    pub seed: u64,
    pub out: PathBuf,
    /// Mount pitch of `static_tilt` (deg).
    pub tilt_deg: f64,
    /// Spin rate of `active_rotation` about the shell vertical (rev/s).
    pub rotation_rate: f64,
    /// Mount pitch of the spinning `active_rotation` sensor (deg).
    pub rotation_tilt_deg: f64,
    /// Voxel size for completeness (m).
    pub map_resolution: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            baseline: BaselineMode::PassiveExcitation,
            control: ControlMode::GroundTruth,
            duration: 60.0,
            repeats: 1,
            seed: 0,
            out: PathBuf::from("out"),
            tilt_deg: 15.0,
            rotation_rate: 0.5,
            rotation_tilt_deg: 30.0,
            map_resolution: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub kind: SceneKind,
    /// Extra primitives appended to the built-in scene.
    pub primitives: Vec<Primitive>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self { kind: SceneKind::Corridor, primitives: Vec::new() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub scene: SceneSection,
    pub trajectory: TrajectoryParams,
    pub vehicle: VehicleParams,
    pub lidar: LidarParams,
    pub imu: ImuParams,
    pub controller: ControllerParams,
    pub oscillation: OscillationParams,
    pub estimator: LioParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Run { context: path.display().to_string(), source: Box::new(e) })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let check = |ok: bool, field: &str, reason: &str| if ok { Ok(()) } else { Err(Error::invalid(field, reason)) };
        check(e.duration > 0.0 && e.duration.is_finite(), "experiment.duration", "must be > 0")?;
        check(e.repeats >= 1, "experiment.repeats", "must be >= 1")?;
        check(e.tilt_deg > 0.0 && e.tilt_deg <= 30.0, "experiment.tilt_deg", "must be in (0, 30]")?;
        check(e.rotation_rate > 0.0 && e.rotation_rate.is_finite(), "experiment.rotation_rate", "must be > 0")?;
        check(e.rotation_tilt_deg >= 0.0 && e.rotation_tilt_deg <= 90.0, "experiment.rotation_tilt_deg", "must be in [0, 90]")?;
        check(e.map_resolution > 0.0, "experiment.map_resolution", "must be > 0")?;
        self.vehicle.validate()?;
        self.lidar.validate()?;
        self.imu.validate()?;
        self.controller.validate()?;
        self.oscillation.validate()?;
        self.estimator.validate()?;
        crate::control::ReferenceTrajectory::new(self.trajectory.clone())?;
        self.build_scene()?;
        Ok(())
    }

    pub fn build_scene(&self) -> Result<Scene> {
        let mut scene = build_scene(self.scene.kind);
        for p in &self.scene.primitives {
            scene.add(p.clone())?;
        }
        Ok(scene)
    }

    /// SHA-256 of the canonical serialization, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.experiment.out = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    /// Sets a dotted key (for example `lidar.range_noise`) from a TOML literal.
    /// Bare words that do not parse as TOML are taken as strings.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        let parsed = parse_literal(value);
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().ok_or_else(|| Error::Config("empty override key".into()))?;
        let mut table = &mut root;
        for part in path {
            table = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not a section")))?;
        }
        table.insert(last.to_string(), parsed);
        let cfg: Self = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| Error::Config(format!("`{key}`: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_literal(value: &str) -> toml::Value {
    let wrapped = format!("v = {value}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[experiment]\nduraton = 3.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[lidarr]\n").is_err());
        assert!(ExperimentConfig::from_toml("[lidar]\nrays_per_frame = 100\n").is_ok());
    }

    #[test]
    fn field_level_validation() {
        let err = ExperimentConfig::from_toml("[experiment]\nduration = 0.0\n").unwrap_err();
        assert!(err.to_string().contains("experiment.duration"), "{err}");
        let err = ExperimentConfig::from_toml("[experiment]\ntilt_deg = 45.0\n").unwrap_err();
        assert!(err.to_string().contains("tilt_deg"), "{err}");
        assert!(ExperimentConfig::from_toml("[experiment]\nrepeats = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[experiment]\nbaseline = \"spinning\"\n").is_err());
    }

    #[test]
    fn overrides_apply_dotted_keys() {
        let cfg = ExperimentConfig::default();
        let c = cfg.with_override("lidar.range_noise", "0.05").unwrap();
        assert_eq!(c.lidar.range_noise, 0.05);
        let c = cfg.with_override("experiment.baseline", "static_tilt").unwrap();
        assert_eq!(c.experiment.baseline, BaselineMode::StaticTilt);
        let c = cfg.with_override("vehicle.drive.offset_radius", "0.07").unwrap();
        assert_eq!(c.vehicle.drive.offset_radius, 0.07);
        assert!(cfg.with_override("lidar.nope", "1").is_err());
        assert!(cfg.with_override("experiment.duration", "-1").is_err());
        assert_ne!(cfg.with_override("lidar.range_noise", "0.05").unwrap().hash(), cfg.hash());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let mut a = ExperimentConfig::default();
        let h = a.hash();
        a.experiment.out = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), h);
        a.experiment.seed = 9;
        assert_ne!(a.hash(), h);
    }

    #[test]
    fn scene_primitives_from_config() {
        let text = r#"
[scene]
kind = "lab"

[[scene.primitives]]
id = "extra_box"
type = "box"
center = [0.0, 0.0, 0.5]
extents = [0.4, 0.4, 1.0]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let scene = cfg.build_scene().unwrap();
        assert!(scene.primitive_index("extra_box").is_some());
        assert!(ExperimentConfig::from_toml("[[scene.primitives]]\nid = \"q\"\ntype = \"quad\"\ncenter = [0.0, 0.0, 1.0]\nextents = [-1.0, 1.0]\n").is_err());
        assert!(ExperimentConfig::from_toml("[[scene.primitives]]\nid = \"q\"\ntype = \"quad\"\ncenter = [0.0, 0.0, 1.0]\nextents = [1.0, 1.0]\ncolour = 1\n").is_err());
    }

    #[test]
    fn cli_control_names() {
        assert_eq!("gt".parse::<ControlMode>().unwrap(), ControlMode::GroundTruth);
        assert_eq!("lio".parse::<ControlMode>().unwrap(), ControlMode::EstimatorInLoop);
        assert!("x".parse::<ControlMode>().is_err());
        for m in BaselineMode::ALL {
            assert_eq!(m.name().parse::<BaselineMode>().unwrap(), m);
        }
    }
}
