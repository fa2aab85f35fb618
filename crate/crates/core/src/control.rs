//! Torque-based chassis velocity controller.
//!
//! Three PI loops act on the chassis twist (vx, vy, ω) measured through
//! forward kinematics of the wheel encoders. Their output is a chassis wrench
//! that is split into motor torques with [`wrench_to_torques`]. Because the
//! wheels are torque-driven, a slipping wheel is free to spin up and the
//! motion-constraint error stays observable, the way an open differential
//! lets one wheel spin.

use serde::{Deserialize, Serialize};

use crate::kinematics::{
    forward_kinematics, wrench_to_torques, ChassisGeometry, ChassisTwist, ChassisWrench,
    WheelSpeeds, WheelTorques,
};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    /// Proportional gain per axis: N/(m/s), N/(m/s), N·m/(rad/s).
    pub kp: [f64; 3],
    /// Integral gain per axis.
    pub ki: [f64; 3],
    /// Anti-windup clamp on the accumulated error per axis (m, m, rad).
    pub integral_limit: [f64; 3],
}

impl Default for PiGains {
    fn default() -> Self {
        Self {
            kp: [30.0, 30.0, 0.6],
            ki: [60.0, 60.0, 1.2],
            integral_limit: [0.15, 0.15, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub gains: PiGains,
    /// Per-wheel torque bound (N·m).
    pub torque_limit: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gains: PiGains::default(),
            torque_limit: 0.2,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let g = &self.gains;
        for axis in 0..3 {
            if !(g.kp[axis] >= 0.0 && g.ki[axis] >= 0.0) {
                return Err(invalid(
                    "controller.gains",
                    "kp and ki must be non-negative",
                ));
            }
            if !(g.integral_limit[axis] > 0.0) {
                return Err(invalid(
                    "controller.gains.integral_limit",
                    "must be positive",
                ));
            }
        }
        if !(self.torque_limit > 0.0 && self.torque_limit.is_finite()) {
            return Err(invalid("controller.torque_limit", "must be positive"));
        }
        Ok(())
    }
}

fn invalid(field: &str, reason: &str) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerState {
    pub integral_error: [f64; 3],
}

/// One control period. Returns the saturated motor torques and the new state.
pub fn controller_step(
    setpoint: ChassisTwist,
    measured: ChassisTwist,
    state: &ControllerState,
    config: &ControllerConfig,
    dt: f64,
    geom: &ChassisGeometry,
) -> (WheelTorques, ControllerState) {
    debug_assert!(dt > 0.0);
    let sp = setpoint.to_array();
    let me = measured.to_array();
    let g = &config.gains;
    let mut next = *state;
    let mut wrench = [0.0; 3];
    for axis in 0..3 {
        let e = sp[axis] - me[axis];
        let lim = g.integral_limit[axis];
        next.integral_error[axis] = (state.integral_error[axis] + e * dt).clamp(-lim, lim);
        wrench[axis] = g.kp[axis] * e + g.ki[axis] * next.integral_error[axis];
    }
    let torques = wrench_to_torques(ChassisWrench::new(wrench[0], wrench[1], wrench[2]), geom);
    (saturate(torques, config.torque_limit), next)
}

/// Same as [`controller_step`] with the twist measured from encoder speeds.
pub fn controller_step_from_wheels(
    setpoint: ChassisTwist,
    encoder: WheelSpeeds,
    state: &ControllerState,
    config: &ControllerConfig,
    dt: f64,
    geom: &ChassisGeometry,
) -> (WheelTorques, ControllerState) {
    controller_step(
        setpoint,
        forward_kinematics(encoder, geom),
        state,
        config,
        dt,
        geom,
    )
}

/// Uniform scaling so that no wheel exceeds `limit`; keeps the wrench direction.
pub fn saturate(torques: WheelTorques, limit: f64) -> WheelTorques {
    let peak = torques.max_abs();
    if peak <= limit {
        return torques;
    }
    let s = limit / peak;
    let t = torques.to_array();
    WheelTorques::new(t[0] * s, t[1] * s, t[2] * s, t[3] * s)
}
