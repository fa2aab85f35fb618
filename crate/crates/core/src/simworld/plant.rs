//! Planar rigid-body chassis with per-wheel Coulomb friction.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::config::PlantConfig;
use crate::kinematics::{
    inverse_kinematics, ChassisGeometry, ChassisTwist, WheelSpeeds, WheelTorques,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WheelContact {
    #[default]
    Grounded,
    Slipping,
    Lifted,
}

impl WheelContact {
    pub fn code(self) -> u8 {
        match self {
            WheelContact::Grounded => 0,
            WheelContact::Slipping => 1,
            WheelContact::Lifted => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(WheelContact::Grounded),
            1 => Some(WheelContact::Slipping),
            2 => Some(WheelContact::Lifted),
            _ => None,
        }
    }
}

/// True chassis state. Pose is that of the chassis center (odometer frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub t: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    /// World-frame linear velocity.
    pub velocity: Vector3<f64>,
    /// Body-frame angular velocity.
    pub angular_velocity: Vector3<f64>,
    /// World-frame linear acceleration over the last step.
    pub acceleration: Vector3<f64>,
    /// Surface speed of each wheel's own spin (what an encoder would see).
    pub wheel_spin: WheelSpeeds,
    pub wheel_contact: [WheelContact; 4],
}

impl GroundTruth {
    pub fn at_rest(t: f64, x: f64, y: f64, yaw: f64) -> Self {
        Self {
            t,
            position: Vector3::new(x, y, 0.0),
            orientation: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            wheel_spin: WheelSpeeds::default(),
            wheel_contact: [WheelContact::Grounded; 4],
        }
    }

    pub fn yaw(&self) -> f64 {
        crate::math::yaw_of(&self.orientation)
    }

    /// Chassis twist in its own frame.
    pub fn body_twist(&self) -> ChassisTwist {
        let v = self.orientation.inverse() * self.velocity;
        ChassisTwist::new(v.x, v.y, self.angular_velocity.z)
    }

    /// Wheel surface speeds consistent with rolling at the current body twist.
    pub fn rolling_speeds(&self, geom: &ChassisGeometry) -> WheelSpeeds {
        inverse_kinematics(self.body_twist(), geom)
    }

    /// Kinetic energy of chassis plus wheel spin.
    pub fn kinetic_energy(&self, plant: &PlantConfig, geom: &ChassisGeometry) -> f64 {
        let spin: f64 = self.wheel_spin.to_array().iter().map(|s| s * s).sum();
        0.5 * plant.mass * self.velocity.norm_squared()
            + 0.5 * plant.yaw_inertia * self.angular_velocity.z.powi(2)
            + 0.5 * plant.wheel_inertia / (geom.r * geom.r) * spin
    }
}

/// Fault effects active during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultEffects {
    /// Multiplier on the friction coefficients of each wheel.
    pub friction_scale: [f64; 4],
    pub collision: bool,
    /// Prescribed world velocity and yaw rate while the chassis is carried.
    pub carry: Option<(Vector3<f64>, f64)>,
}

impl Default for FaultEffects {
    fn default() -> Self {
        Self {
            friction_scale: [1.0; 4],
            collision: false,
            carry: None,
        }
    }
}

/// Advance the chassis by `dt` under motor `torques`.
///
/// Grounded wheels roll with the body; the traction each needs is checked
/// against `μ_s·N`, and any wheel over budget is released to slip under
/// kinetic friction with its spin integrated on its own. Velocities are
/// updated first and the pose with the new velocities (semi-implicit Euler).
pub fn step(
    state: &GroundTruth,
    torques: WheelTorques,
    dt: f64,
    plant: &PlantConfig,
    geom: &ChassisGeometry,
    faults: &FaultEffects,
) -> GroundTruth {
    debug_assert!(dt > 0.0 && dt <= 0.01 + 1e-12);
    if let Some((v_world, yaw_rate)) = faults.carry {
        return carried(state, v_world, yaw_rate, torques, dt, plant, geom);
    }

    let jac = geom.wheel_jacobian();
    let j: [Vector3<f64>; 4] = jac.map(Vector3::from);
    let tw = state.body_twist();
    let v = Vector3::new(tw.vx, tw.vy, tw.omega);
    let tau = torques.to_array();
    let mut spin = state.wheel_spin.to_array();
    let r = geom.r;
    let k_w = plant.wheel_inertia / (r * r);
    let d_w = plant.wheel_damping / (r * r);
    let load = plant.normal_load();
    let mu_s = faults.friction_scale.map(|s| s * plant.mu_static);
    let mu_k = faults.friction_scale.map(|s| s * plant.mu_kinetic);
    let drag = Vector3::new(
        -plant.linear_damping * v.x,
        -plant.linear_damping * v.y,
        -plant.angular_damping * v.z,
    );
    let mass = Matrix3::from_diagonal(&Vector3::new(plant.mass, plant.mass, plant.yaw_inertia));

    if faults.collision {
        // Chassis pinned; every wheel spins against kinetic friction.
        let mut next = *state;
        next.t = state.t + dt;
        next.acceleration = -state.velocity / dt;
        next.velocity = Vector3::zeros();
        next.angular_velocity = Vector3::zeros();
        for i in 0..4 {
            let f = mu_k[i] * load * sign_or_zero(spin[i]);
            let ds = (tau[i] / r - f - d_w * spin[i]) / k_w;
            let s_new = spin[i] + ds * dt;
            spin[i] = if spin[i] != 0.0 && s_new.signum() != spin[i].signum() {
                0.0
            } else {
                s_new
            };
        }
        next.wheel_spin = WheelSpeeds::from_array(spin);
        next.wheel_contact = [WheelContact::Slipping; 4];
        return next;
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mode {
        Grip,
        Slip(f64),
    }
    let mut mode = [Mode::Grip; 4];
    for i in 0..4 {
        let rel = spin[i] - j[i].dot(&v);
        let slipping = state.wheel_contact[i] != WheelContact::Grounded;
        if slipping && rel.abs() >= plant.regrip_speed {
            mode[i] = Mode::Slip(rel.signum());
        }
    }

    let mut accel = Vector3::zeros();
    for _ in 0..5 {
        let mut lhs = mass;
        let mut rhs = drag;
        for i in 0..4 {
            match mode[i] {
                Mode::Grip => {
                    lhs += k_w * j[i] * j[i].transpose();
                    rhs += j[i] * (tau[i] / r - d_w * spin[i]);
                }
                Mode::Slip(dir) => rhs += j[i] * (mu_k[i] * load * dir),
            }
        }
        accel = lhs.lu().solve(&rhs).unwrap_or_else(Vector3::zeros);
        // Release the wheel furthest over its static budget, if any.
        let mut worst: Option<(usize, f64, f64)> = None;
        for i in 0..4 {
            if mode[i] == Mode::Grip {
                let f = tau[i] / r - k_w * j[i].dot(&accel) - d_w * spin[i];
                let ratio = f.abs() / (mu_s[i] * load);
                if ratio > 1.0 && worst.is_none_or(|w| ratio > w.1) {
                    worst = Some((i, ratio, f.signum()));
                }
            }
        }
        match worst {
            Some((i, _, dir)) => mode[i] = Mode::Slip(dir),
            None => break,
        }
    }

    let mut v_new = v + accel * dt;
    // Body-frame rotation of the linear velocity (exact for the step).
    let rot = -v_new.z * dt;
    let (s, c) = rot.sin_cos();
    let (vx, vy) = (c * v_new.x - s * v_new.y, s * v_new.x + c * v_new.y);
    v_new.x = vx;
    v_new.y = vy;

    let mut contact = [WheelContact::Grounded; 4];
    for i in 0..4 {
        let ground = j[i].dot(&v_new);
        match mode[i] {
            Mode::Grip => spin[i] = ground,
            Mode::Slip(dir) => {
                let ds = (tau[i] / r - mu_k[i] * load * dir - d_w * spin[i]) / k_w;
                let s_new = spin[i] + ds * dt;
                // Crossing the ground speed means the wheel caught up: grip.
                if (s_new - ground).signum() != dir {
                    spin[i] = ground;
                } else {
                    spin[i] = s_new;
                    contact[i] = WheelContact::Slipping;
                }
            }
        }
    }

    let yaw0 = state.yaw();
    let yaw1 = yaw0 + v_new.z * dt;
    let mid = UnitQuaternion::from_euler_angles(0.0, 0.0, 0.5 * (yaw0 + yaw1));
    let orientation = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw1);
    let v_world = orientation * Vector3::new(v_new.x, v_new.y, 0.0);
    let mut position = state.position + mid * Vector3::new(v_new.x, v_new.y, 0.0) * dt;
    position.z = state.position.z;

    GroundTruth {
        t: state.t + dt,
        position,
        orientation,
        velocity: v_world,
        angular_velocity: Vector3::new(0.0, 0.0, v_new.z),
        acceleration: (v_world - state.velocity) / dt,
        wheel_spin: WheelSpeeds::from_array(spin),
        wheel_contact: contact,
    }
}

fn carried(
    state: &GroundTruth,
    v_world: Vector3<f64>,
    yaw_rate: f64,
    torques: WheelTorques,
    dt: f64,
    plant: &PlantConfig,
    geom: &ChassisGeometry,
) -> GroundTruth {
    let r = geom.r;
    let k_w = plant.wheel_inertia / (r * r);
    let d_w = plant.wheel_damping / (r * r);
    let tau = torques.to_array();
    let mut spin = state.wheel_spin.to_array();
    for i in 0..4 {
        spin[i] += (tau[i] / r - d_w * spin[i]) / k_w * dt;
    }
    let yaw0 = state.yaw();
    let yaw1 = yaw0 + yaw_rate * dt;
    GroundTruth {
        t: state.t + dt,
        position: state.position + v_world * dt,
        orientation: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw1),
        velocity: v_world,
        angular_velocity: Vector3::new(0.0, 0.0, yaw_rate),
        acceleration: (v_world - state.velocity) / dt,
        wheel_spin: WheelSpeeds::from_array(spin),
        wheel_contact: [WheelContact::Lifted; 4],
    }
}

fn sign_or_zero(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}
