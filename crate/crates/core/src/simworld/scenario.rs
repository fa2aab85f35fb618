//! Closed-loop scenario execution: controller, plant and all samplers.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{FaultType, ScenarioConfig};
use super::plant::{step, FaultEffects, GroundTruth, WheelContact};
use super::sensors::{
    generate_landmarks, imu_pose, imu_velocity, sample_features, sample_imu, sample_wheels,
    CameraFrame, ImuBiasState, ImuSample, ImuTruth, WheelOdomSample,
};
use crate::control::{controller_step_from_wheels, ControllerState};
use crate::kinematics::WheelTorques;
use crate::math::wrap_angle;
use crate::Result;

/// Everything a scenario run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub config: ScenarioConfig,
    pub imu: Vec<ImuSample>,
    pub wheels: Vec<WheelOdomSample>,
    pub frames: Vec<CameraFrame>,
    /// Chassis ground truth at the IMU rate.
    pub ground_truth: Vec<GroundTruth>,
    pub summary: MotionSummary,
}

impl SensorLog {
    /// Ground truth sample closest to `t`.
    pub fn truth_at(&self, t: f64) -> &GroundTruth {
        let idx = self.ground_truth.partition_point(|g| g.t < t - 1e-9);
        let idx = idx.min(self.ground_truth.len() - 1);
        if idx > 0
            && (self.ground_truth[idx - 1].t - t).abs() < (self.ground_truth[idx].t - t).abs()
        {
            &self.ground_truth[idx - 1]
        } else {
            &self.ground_truth[idx]
        }
    }
}

/// Chassis motion parameters of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionSummary {
    pub abnormal_duration: f64,
    pub run_time: f64,
    pub average_speed: f64,
    pub max_speed: f64,
    /// Path length travelled (m).
    pub displacement: f64,
    /// Sum of absolute heading changes (deg).
    pub accumulated_angle: f64,
}

impl MotionSummary {
    pub fn from_truth(truth: &[GroundTruth], abnormal_duration: f64) -> Self {
        if truth.is_empty() {
            return Self::default();
        }
        let run_time = truth[truth.len() - 1].t - truth[0].t;
        let mut displacement = 0.0;
        let mut angle = 0.0;
        for w in truth.windows(2) {
            displacement += (w[1].position - w[0].position).norm();
            angle += wrap_angle(w[1].yaw() - w[0].yaw()).abs();
        }
        let max_speed = truth.iter().map(|g| g.velocity.norm()).fold(0.0, f64::max);
        Self {
            abnormal_duration,
            run_time,
            average_speed: if run_time > 0.0 {
                displacement / run_time
            } else {
                0.0
            },
            max_speed,
            displacement,
            accumulated_angle: angle.to_degrees(),
        }
    }
}

const STREAM_LANDMARKS: u64 = 0x6c61_6e64;
const STREAM_IMU: u64 = 0x696d_7500;
const STREAM_WHEELS: u64 = 0x7768_6565;
const STREAM_CAMERA: u64 = 0x6361_6d00;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream.rotate_left(17))
}

/// Run the closed loop for the configured duration.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SensorLog> {
    config.validate()?;
    let (imu_p, enc_p, cam_p) = config.rates.tick_periods()?;
    let dt = config.rates.sim_dt;
    let total = (config.duration / dt).round() as u64;
    let geom = &config.geometry;
    let ext = &config.extrinsics;

    let landmarks = generate_landmarks(
        &config.landmarks,
        &mut stream_rng(config.seed, STREAM_LANDMARKS),
    );
    let mut imu_rng = stream_rng(config.seed, STREAM_IMU);
    let mut wheel_rng = stream_rng(config.seed, STREAM_WHEELS);
    let mut cam_rng = stream_rng(config.seed, STREAM_CAMERA);

    let [x0, y0, yaw0] = config.initial_pose;
    let mut state = GroundTruth::at_rest(0.0, x0, y0, yaw0);
    let mut bias = ImuBiasState {
        gyro: Vector3::from(config.noise.gyro_bias_init),
        accel: Vector3::from(config.noise.accel_bias_init),
    };
    let mut ctrl = ControllerState::default();
    let mut torques = WheelTorques::default();

    let mut log = SensorLog {
        config: config.clone(),
        imu: Vec::with_capacity((total / imu_p + 1) as usize),
        wheels: Vec::with_capacity((total / enc_p + 1) as usize),
        frames: Vec::with_capacity((total / cam_p + 1) as usize),
        ground_truth: Vec::with_capacity((total / imu_p + 1) as usize),
        summary: MotionSummary::default(),
    };

    let imu_period = imu_p as f64 * dt;
    let enc_period = enc_p as f64 * dt;
    let mut imu_v_prev = imu_velocity(&state, ext);
    let mut yaw_accum = 0.0;
    // Velocity and yaw rate of the chassis when a carry began.
    let mut carry_entry: Option<(Vector3<f64>, f64)> = None;

    for n in 0..=total {
        let t = n as f64 * dt;
        state.t = t;

        if n % imu_p == 0 {
            let v_now = imu_velocity(&state, ext);
            let (acceleration, omega_z) = if n == 0 {
                (state.acceleration, state.angular_velocity.z)
            } else {
                ((v_now - imu_v_prev) / imu_period, yaw_accum / imu_period)
            };
            imu_v_prev = v_now;
            yaw_accum = 0.0;
            let pose = imu_pose(&state, ext);
            let truth = ImuTruth {
                t,
                pose,
                velocity: v_now,
                acceleration,
                angular_velocity: ext.imu_odom.rotation * Vector3::new(0.0, 0.0, omega_z),
            };
            log.imu.push(sample_imu(
                &truth,
                &config.noise,
                &mut bias,
                imu_period,
                &mut imu_rng,
            ));
            log.ground_truth.push(state);
        }

        let abduction = config
            .faults
            .iter()
            .find(|f| f.kind == FaultType::Abduction && f.active(t));

        if abduction.is_some() {
            state.wheel_contact = [WheelContact::Lifted; 4];
        } else if carry_entry.take().is_some() {
            // Set back down: wheels touch the ground rolling with the body.
            state.wheel_contact = [WheelContact::Grounded; 4];
            state.position.z = 0.0;
            state.velocity.z = 0.0;
            state.wheel_spin = state.rolling_speeds(geom);
            ctrl = ControllerState::default();
        }

        if n % enc_p == 0 {
            let sample = sample_wheels(&state, &config.noise, &mut wheel_rng);
            if abduction.is_some() {
                torques = WheelTorques::default();
                ctrl = ControllerState::default();
            } else {
                let (tq, next) = controller_step_from_wheels(
                    config.setpoint_at(t),
                    sample.speeds,
                    &ctrl,
                    &config.controller,
                    enc_period,
                    geom,
                );
                torques = tq;
                ctrl = next;
            }
            log.wheels.push(sample);
        }

        if n % cam_p == 0 {
            let frame_id = n / cam_p;
            log.frames.push(sample_features(
                &state,
                frame_id,
                &landmarks,
                ext,
                &config.camera,
                config.noise.pixel_sigma,
                &mut cam_rng,
            ));
        }

        if n == total {
            break;
        }

        let mut effects = FaultEffects::default();
        for f in config.faults.iter().filter(|f| f.active(t)) {
            match f.kind {
                FaultType::Slip => {
                    for &w in &f.wheels {
                        effects.friction_scale[usize::from(w - 1)] *= f.friction_scale;
                    }
                }
                FaultType::Collision => {
                    effects.collision = true;
                    for &w in &f.wheels {
                        effects.friction_scale[usize::from(w - 1)] *= f.friction_scale;
                    }
                }
                FaultType::Abduction => {}
            }
        }
        if let Some(f) = abduction {
            let (v_entry, w_entry) =
                *carry_entry.get_or_insert((state.velocity, state.angular_velocity.z));
            let s = t - f.start;
            let fade = (1.0 - s / f.carry_ramp).max(0.0);
            let bump = 2.0 / f.duration * (std::f64::consts::PI * s / f.duration).sin().powi(2);
            let v = v_entry * fade + Vector3::from(f.carry) * bump;
            let vz = (f.carry_height(s + dt) - state.position.z) / dt;
            effects.carry = Some((Vector3::new(v.x, v.y, vz), w_entry * fade));
        }

        let next = step(&state, torques, dt, &config.plant, geom, &effects);
        yaw_accum += next.angular_velocity.z * dt;
        state = next;
    }

    log.summary = MotionSummary::from_truth(&log.ground_truth, config.abnormal_duration());
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::constraint_error;
    use crate::simworld::config::{CommandSegment, FaultConfig, NoiseConfig};

    fn short(duration: f64) -> ScenarioConfig {
        ScenarioConfig {
            name: "short".into(),
            duration,
            seed: 7,
            initial_pose: [0.0; 3],
            commands: vec![
                CommandSegment {
                    start: 0.0,
                    vx: 0.2,
                    vy: 0.0,
                    omega: 0.0,
                },
                CommandSegment {
                    start: 1.0,
                    vx: 0.1,
                    vy: 0.1,
                    omega: 0.4,
                },
            ],
            faults: vec![],
            noise: NoiseConfig::default(),
            geometry: Default::default(),
            plant: Default::default(),
            controller: Default::default(),
            extrinsics: Default::default(),
            rates: Default::default(),
            camera: Default::default(),
            landmarks: Default::default(),
        }
    }

    #[test]
    fn stream_lengths_follow_rates() {
        let log = run_scenario(&short(2.0)).unwrap();
        assert_eq!(log.imu.len(), 401);
        assert_eq!(log.wheels.len(), 101);
        assert_eq!(log.frames.len(), 21);
        assert!(log.imu.windows(2).all(|w| w[1].t > w[0].t));
        assert!((log.frames[20].t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clean_run_stays_grounded_and_constrained() {
        let log = run_scenario(&short(3.0)).unwrap();
        for g in &log.ground_truth {
            assert!(g.wheel_contact.iter().all(|c| *c == WheelContact::Grounded));
            assert!(constraint_error(g.wheel_spin).abs() < 1e-9);
            assert!((g.orientation.norm() - 1.0).abs() < 1e-9);
            assert_eq!(g.position.z, 0.0);
        }
        assert!(log.summary.displacement > 0.2);
    }

    #[test]
    fn same_seed_same_log() {
        let a = run_scenario(&short(1.5)).unwrap();
        let b = run_scenario(&short(1.5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn abduction_zeroes_encoders_for_its_duration() {
        let mut cfg = short(6.0);
        cfg.faults.push(FaultConfig {
            kind: FaultType::Abduction,
            start: 2.0,
            duration: 3.0,
            wheels: vec![],
            friction_scale: 1.0,
            carry: [0.0, -0.5, 0.0],
            carry_ramp: 1.0,
            lift: 0.05,
            sway: 0.02,
            sway_hz: 2.0,
        });
        let log = run_scenario(&cfg).unwrap();
        let zero: Vec<_> = log
            .wheels
            .iter()
            .filter(|w| w.speeds.to_array() == [0.0; 4])
            .collect();
        assert_eq!(zero.len(), 150);
        assert!((zero[0].t - 2.0).abs() < 1e-9);
        assert!((zero[zero.len() - 1].t - 4.98).abs() < 1e-9);
        // body keeps moving while carried
        let a = log.truth_at(2.5).position;
        let b = log.truth_at(4.5).position;
        assert!((b - a).norm() > 0.2);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = short(1.0);
        cfg.duration = 0.0;
        assert!(run_scenario(&cfg).is_err());
    }
}
