//! Mecanum chassis kinematics and the torque/wrench mappings.
//!
//! Wheel numbering follows the usual top view with the chassis facing +x:
//! 1 = front-left, 2 = front-right, 3 = rear-left, 4 = rear-right. Forward
//! wheel rotation (the one that drives the chassis along +x) is positive.
//!
//! The wheel Jacobian is
//!
//! ```text
//! | v1 |   | 1 -1 -(a+b) |
//! | v2 | = | 1  1 -(a+b) | | vx |
//! | v3 |   | 1 -1  (a+b) | | vy |
//! | v4 |   | 1  1  (a+b) | | w  |
//! ```
//!
//! so any rolling-without-slip motion satisfies `v1 + v4 = v2 + v3`.
//!
//! The wrench produced by the wheel torques is obtained from virtual work,
//! `W = Jᵀ τ / r`. Its third row carries `(a+b)/r`, which coincides with the
//! `√2·R/r` factor of the commonly printed transformation only for a square
//! wheel layout (`a = b`). The torque split is the minimum-norm pseudo-inverse
//! of that map.

use serde::{Deserialize, Serialize};

use crate::Error;

/// Planar chassis geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChassisGeometry {
    /// Half wheel-base (m).
    pub a: f64,
    /// Half track-width (m).
    pub b: f64,
    /// Wheel radius (m).
    pub r: f64,
}

impl ChassisGeometry {
    pub fn new(a: f64, b: f64, r: f64) -> Result<Self, Error> {
        let geom = Self { a, b, r };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), Error> {
        for (name, value) in [("a", self.a), ("b", self.b), ("r", self.r)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig {
                    field: format!("geometry.{name}"),
                    reason: format!("must be finite and positive, got {value}"),
                });
            }
        }
        Ok(())
    }

    /// Distance from the chassis center to a wheel center, `sqrt(a² + b²)`.
    pub fn center_radius(&self) -> f64 {
        self.a.hypot(self.b)
    }

    /// Lever arm `a + b` appearing in the wheel Jacobian.
    pub fn lever(&self) -> f64 {
        self.a + self.b
    }

    /// Row-major 4×3 wheel Jacobian.
    pub fn wheel_jacobian(&self) -> [[f64; 3]; 4] {
        let l = self.lever();
        [
            [1.0, -1.0, -l],
            [1.0, 1.0, -l],
            [1.0, -1.0, l],
            [1.0, 1.0, l],
        ]
    }
}

impl Default for ChassisGeometry {
    fn default() -> Self {
        Self {
            a: 0.1,
            b: 0.1,
            r: 0.03,
        }
    }
}

/// Chassis velocity in its own frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChassisTwist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl ChassisTwist {
    pub const fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.vx, self.vy, self.omega]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn linear_speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

/// Wheel surface speeds (m/s), indexed 1..4 as fields `v1..v4`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelSpeeds {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
}

impl WheelSpeeds {
    pub const fn new(v1: f64, v2: f64, v3: f64, v4: f64) -> Self {
        Self { v1, v2, v3, v4 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.v1, self.v2, self.v3, self.v4]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Motor torques (N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelTorques {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub tau4: f64,
}

impl WheelTorques {
    pub const fn new(tau1: f64, tau2: f64, tau3: f64, tau4: f64) -> Self {
        Self {
            tau1,
            tau2,
            tau3,
            tau4,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.tau1, self.tau2, self.tau3, self.tau4]
    }

    pub fn from_array(t: [f64; 4]) -> Self {
        Self::new(t[0], t[1], t[2], t[3])
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, t| m.max(t.abs()))
    }
}

/// Planar force/torque acting on the chassis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChassisWrench {
    pub fx: f64,
    pub fy: f64,
    pub tau_o: f64,
}

impl ChassisWrench {
    pub const fn new(fx: f64, fy: f64, tau_o: f64) -> Self {
        Self { fx, fy, tau_o }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.fx, self.fy, self.tau_o]
    }
}

/// Wheel index in `1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WheelIndex(u8);

impl WheelIndex {
    pub fn new(index: u8) -> Result<Self, Error> {
        if (1..=4).contains(&index) {
            Ok(Self(index))
        } else {
            Err(Error::InvalidWheelIndex(index))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    fn slot(self) -> usize {
        usize::from(self.0 - 1)
    }
}

pub fn inverse_kinematics(twist: ChassisTwist, geom: &ChassisGeometry) -> WheelSpeeds {
    let j = geom.wheel_jacobian();
    let t = twist.to_array();
    let row = |r: [f64; 3]| r[0] * t[0] + r[1] * t[1] + r[2] * t[2];
    WheelSpeeds::new(row(j[0]), row(j[1]), row(j[2]), row(j[3]))
}

/// Least-squares chassis twist from four wheel speeds.
pub fn forward_kinematics(speeds: WheelSpeeds, geom: &ChassisGeometry) -> ChassisTwist {
    let [v1, v2, v3, v4] = speeds.to_array();
    let l = geom.lever();
    ChassisTwist::new(
        (v1 + v2 + v3 + v4) / 4.0,
        (-v1 + v2 - v3 + v4) / 4.0,
        (-v1 - v2 + v3 + v4) / (4.0 * l),
    )
}

/// Chassis twist from the three wheels other than `excluded`, by exact
/// inversion of the corresponding 3×3 block of the wheel Jacobian.
pub fn forward_kinematics_three_wheel(
    speeds: WheelSpeeds,
    excluded: WheelIndex,
    geom: &ChassisGeometry,
) -> ChassisTwist {
    let [v1, v2, v3, v4] = speeds.to_array();
    let l = geom.lever();
    // Each row pair solved by hand from the remaining three equations.
    let (vx, vy, omega) = match excluded.slot() {
        0 => ((v2 + v3) / 2.0, (v4 - v3) / 2.0, (v4 - v2) / (2.0 * l)),
        1 => ((v1 + v4) / 2.0, (v4 - v3) / 2.0, (v3 - v1) / (2.0 * l)),
        2 => ((v1 + v4) / 2.0, (v2 - v1) / 2.0, (v4 - v2) / (2.0 * l)),
        _ => ((v2 + v3) / 2.0, (v2 - v1) / 2.0, (v3 - v1) / (2.0 * l)),
    };
    ChassisTwist::new(vx, vy, omega)
}

/// Motion-constraint error `(v1 + v4) − (v2 + v3)`.
pub fn constraint_error(speeds: WheelSpeeds) -> f64 {
    (speeds.v1 + speeds.v4) - (speeds.v2 + speeds.v3)
}

pub fn torques_to_wrench(torques: WheelTorques, geom: &ChassisGeometry) -> ChassisWrench {
    let [t1, t2, t3, t4] = torques.to_array();
    let r = geom.r;
    ChassisWrench::new(
        (t1 + t2 + t3 + t4) / r,
        (-t1 + t2 - t3 + t4) / r,
        geom.lever() * (-t1 - t2 + t3 + t4) / r,
    )
}

/// Minimum-norm torque split realizing `wrench`.
pub fn wrench_to_torques(wrench: ChassisWrench, geom: &ChassisGeometry) -> WheelTorques {
    let r = geom.r;
    let fx = r / 4.0 * wrench.fx;
    let fy = r / 4.0 * wrench.fy;
    let tz = r / (4.0 * geom.lever()) * wrench.tau_o;
    WheelTorques::new(fx - fy - tz, fx + fy - tz, fx - fy + tz, fx + fy + tz)
}
