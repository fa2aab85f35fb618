use serde::{Deserialize, Serialize};

use crate::control::ControllerConfig;
use crate::kinematics::{ChassisGeometry, ChassisTwist};
use crate::math::Extrinsics;
use crate::{Error, Result};

/// Rigid-body and friction parameters of the simulated chassis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub mass: f64,
    pub yaw_inertia: f64,
    /// Rotational inertia of one wheel about its axle (kg·m²).
    pub wheel_inertia: f64,
    /// Viscous drag on the wheel axle (N·m·s/rad).
    pub wheel_damping: f64,
    /// Chassis linear rolling drag (N·s/m).
    pub linear_damping: f64,
    /// Chassis yaw drag (N·m·s/rad).
    pub angular_damping: f64,
    pub mu_static: f64,
    pub mu_kinetic: f64,
    /// Relative ground speed below which a slipping wheel may grip again (m/s).
    pub regrip_speed: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            mass: 4.0,
            yaw_inertia: 0.05,
            wheel_inertia: 4.0e-4,
            wheel_damping: 1.0e-4,
            linear_damping: 0.5,
            angular_damping: 0.02,
            mu_static: 0.8,
            mu_kinetic: 0.6,
            regrip_speed: 2.0e-3,
        }
    }
}

impl PlantConfig {
    pub fn normal_load(&self) -> f64 {
        self.mass * crate::GRAVITY / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gyro white-noise density (rad/s/√Hz).
    pub gyro_density: f64,
    /// Accelerometer white-noise density (m/s²/√Hz).
    pub accel_density: f64,
    /// Gyro bias random-walk density (rad/s²/√Hz).
    pub gyro_bias_walk: f64,
    /// Accelerometer bias random-walk density (m/s³/√Hz).
    pub accel_bias_walk: f64,
    pub gyro_bias_init: [f64; 3],
    pub accel_bias_init: [f64; 3],
    /// Per-wheel encoder speed noise (m/s).
    pub encoder_sigma: f64,
    /// Feature noise in normalized image coordinates.
    pub pixel_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gyro_density: 1e-3,
            accel_density: 1e-2,
            gyro_bias_walk: 1e-5,
            accel_bias_walk: 1e-4,
            gyro_bias_init: [0.002, -0.001, 0.0015],
            accel_bias_init: [0.02, -0.015, 0.01],
            encoder_sigma: 5e-3,
            pixel_sigma: 1e-3,
        }
    }
}

impl NoiseConfig {
    /// All noise sources and biases zeroed.
    pub fn noiseless() -> Self {
        Self {
            gyro_density: 0.0,
            accel_density: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_init: [0.0; 3],
            accel_bias_init: [0.0; 3],
            encoder_sigma: 0.0,
            pixel_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateConfig {
    /// Physics step (s).
    pub sim_dt: f64,
    pub imu_hz: f64,
    /// Encoder rate; the velocity controller runs on each encoder sample.
    pub encoder_hz: f64,
    pub camera_hz: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            sim_dt: 1e-3,
            imu_hz: 200.0,
            encoder_hz: 50.0,
            camera_hz: 10.0,
        }
    }
}

impl RateConfig {
    /// Sensor periods expressed in physics ticks: (imu, encoder, camera).
    pub fn tick_periods(&self) -> Result<(u64, u64, u64)> {
        let per = |hz: f64, name: &str| -> Result<u64> {
            let ticks = 1.0 / (hz * self.sim_dt);
            let rounded = ticks.round();
            if !(hz > 0.0) || rounded < 1.0 || (ticks - rounded).abs() > 1e-6 {
                return Err(Error::InvalidConfig {
                    field: format!("rates.{name}"),
                    reason: "period must be a whole number of physics steps".into(),
                });
            }
            Ok(rounded as u64)
        };
        Ok((
            per(self.imu_hz, "imu_hz")?,
            per(self.encoder_hz, "encoder_hz")?,
            per(self.camera_hz, "camera_hz")?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    /// Half field of view as a bound on |u| and |v| (normalized coordinates).
    pub max_abs_u: f64,
    pub max_abs_v: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    /// Focal length used to express normalized errors in pixels.
    pub focal_px: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            max_abs_u: 0.8,
            max_abs_v: 0.6,
            min_depth: 0.3,
            max_depth: 12.0,
            focal_px: 460.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkConfig {
    pub count: usize,
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            count: 300,
            center: [0.0, 0.0, 0.75],
            size: [10.0, 10.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultType {
    /// Reduced ground friction under the listed wheels.
    Slip,
    /// Chassis pinned against a rigid barrier; wheels keep being driven.
    Collision,
    /// Chassis lifted and carried; encoders read zero.
    Abduction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub kind: FaultType,
    pub start: f64,
    pub duration: f64,
    /// Slip, collision: wheels on a low-friction patch (1..=4).
    #[serde(default)]
    pub wheels: Vec<u8>,
    /// Slip, collision: multiplier on both friction coefficients of `wheels`.
    #[serde(default = "default_friction_scale")]
    pub friction_scale: f64,
    /// Abduction: world-frame displacement added by the carry (m).
    #[serde(default)]
    pub carry: [f64; 3],
    /// Abduction: time over which the chassis' own motion fades out (s).
    #[serde(default = "default_carry_ramp")]
    pub carry_ramp: f64,
    /// Abduction: peak lift height above the floor (m).
    #[serde(default = "default_lift")]
    pub lift: f64,
    /// Abduction: amplitude of the vertical bob of whoever carries it (m).
    #[serde(default = "default_sway")]
    pub sway: f64,
    #[serde(default = "default_sway_hz")]
    pub sway_hz: f64,
}

fn default_friction_scale() -> f64 {
    0.1
}

fn default_carry_ramp() -> f64 {
    1.0
}

fn default_lift() -> f64 {
    0.05
}

fn default_sway() -> f64 {
    0.02
}

fn default_sway_hz() -> f64 {
    2.0
}

impl FaultConfig {
    pub fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    /// Abduction: height above the floor `s` seconds into the carry.
    pub fn carry_height(&self, s: f64) -> f64 {
        if !(0.0..=self.duration).contains(&s) {
            return 0.0;
        }
        let envelope = (std::f64::consts::PI * s / self.duration).sin();
        envelope * (self.lift + self.sway * (std::f64::consts::TAU * self.sway_hz * s).sin())
    }
}

/// Piecewise-constant twist setpoint starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandSegment {
    pub start: f64,
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
    #[serde(default)]
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration: f64,
    pub seed: u64,
    /// Initial chassis pose: x, y (m), yaw (rad).
    #[serde(default)]
    pub initial_pose: [f64; 3],
    pub commands: Vec<CommandSegment>,
    #[serde(default)]
    pub faults: Vec<FaultConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub geometry: ChassisGeometry,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub extrinsics: Extrinsics,
    #[serde(default)]
    pub rates: RateConfig,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub landmarks: LandmarkConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            field: "<scenario>".into(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn setpoint_at(&self, t: f64) -> ChassisTwist {
        self.commands
            .iter()
            .take_while(|c| c.start <= t)
            .last()
            .map(|c| ChassisTwist::new(c.vx, c.vy, c.omega))
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Error::InvalidConfig {
            field: field.into(),
            reason,
        };
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(bad(
                "duration",
                format!("must be positive, got {}", self.duration),
            ));
        }
        self.geometry.validate()?;
        self.controller.validate()?;
        self.rates.tick_periods()?;
        if !(self.rates.sim_dt > 0.0 && self.rates.sim_dt <= 0.01) {
            return Err(bad("rates.sim_dt", "must be in (0, 0.01]".into()));
        }
        let p = &self.plant;
        for (name, v) in [
            ("plant.mass", p.mass),
            ("plant.yaw_inertia", p.yaw_inertia),
            ("plant.wheel_inertia", p.wheel_inertia),
            ("plant.mu_static", p.mu_static),
            ("plant.mu_kinetic", p.mu_kinetic),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(name, format!("must be positive, got {v}")));
            }
        }
        if p.mu_kinetic > p.mu_static {
            return Err(bad("plant.mu_kinetic", "must not exceed mu_static".into()));
        }
        let n = &self.noise;
        for (name, v) in [
            ("noise.gyro_density", n.gyro_density),
            ("noise.accel_density", n.accel_density),
            ("noise.gyro_bias_walk", n.gyro_bias_walk),
            ("noise.accel_bias_walk", n.accel_bias_walk),
            ("noise.encoder_sigma", n.encoder_sigma),
            ("noise.pixel_sigma", n.pixel_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(name, format!("must be non-negative, got {v}")));
            }
        }
        for (i, c) in self.commands.iter().enumerate() {
            if i > 0 && c.start < self.commands[i - 1].start {
                return Err(bad(
                    &format!("commands[{i}].start"),
                    "segments must be time-ordered".into(),
                ));
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            if !(f.duration > 0.0) {
                return Err(bad(
                    &format!("faults[{i}].duration"),
                    "must be positive".into(),
                ));
            }
            if !(f.start >= 0.0) {
                return Err(bad(
                    &format!("faults[{i}].start"),
                    "must be non-negative".into(),
                ));
            }
            if f.kind == FaultType::Abduction
                && !(f.sway >= 0.0 && f.lift >= f.sway && f.sway_hz >= 0.0 && f.carry_ramp > 0.0)
            {
                return Err(bad(
                    &format!("faults[{i}]"),
                    "abduction needs carry_ramp > 0 and lift >= sway >= 0".into(),
                ));
            }
            if f.wheels.iter().any(|w| !(1..=4).contains(w)) {
                return Err(bad(
                    &format!("faults[{i}].wheels"),
                    "wheel indices must be in 1..=4".into(),
                ));
            }
            if f.kind == FaultType::Slip && f.wheels.is_empty() {
                return Err(bad(
                    &format!("faults[{i}].wheels"),
                    "slip needs wheel indices in 1..=4".into(),
                ));
            }
            if !(f.friction_scale > 0.0) {
                return Err(bad(
                    &format!("faults[{i}].friction_scale"),
                    "must be positive".into(),
                ));
            }
        }
        if self.landmarks.count == 0 {
            return Err(bad("landmarks.count", "must be positive".into()));
        }
        Ok(())
    }

    /// Total time covered by faults (overlaps counted once per fault).
    pub fn abnormal_duration(&self) -> f64 {
        self.faults
            .iter()
            .map(|f| f.duration.min((self.duration - f.start).max(0.0)))
            .fold(0.0, |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioConfig {
        ScenarioConfig::from_toml(
            r#"
            name = "t"
            duration = 2.0
            seed = 1
            commands = [{ start = 0.0, vx = 0.2 }, { start = 1.0, vx = 0.0, omega = 0.5 }]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn setpoint_lookup() {
        let c = minimal();
        assert_eq!(c.setpoint_at(0.5), ChassisTwist::new(0.2, 0.0, 0.0));
        assert_eq!(c.setpoint_at(1.5), ChassisTwist::new(0.0, 0.0, 0.5));
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = minimal();
        c.duration = -1.0;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("duration"), "{e}");

        let mut c = minimal();
        c.faults.push(FaultConfig {
            kind: FaultType::Slip,
            start: 0.5,
            duration: 1.0,
            wheels: vec![7],
            friction_scale: 0.1,
            carry: [0.0; 3],
            carry_ramp: 1.0,
            lift: 0.05,
            sway: 0.02,
            sway_hz: 2.0,
        });
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("faults[0].wheels"), "{e}");

        let mut c = minimal();
        c.rates.imu_hz = 300.0;
        assert!(c.validate().unwrap_err().to_string().contains("imu_hz"));
    }

    #[test]
    fn toml_round_trip() {
        let c = minimal();
        let back = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }
}
