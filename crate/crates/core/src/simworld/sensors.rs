//! Sensor synthesis: IMU, wheel encoders and a synthetic monocular front end.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{CameraConfig, LandmarkConfig, NoiseConfig};
use super::plant::{GroundTruth, WheelContact};
use crate::kinematics::WheelSpeeds;
use crate::math::{Extrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Body angular rate (rad/s).
    pub gyro: Vector3<f64>,
    /// Specific force in the body frame (m/s²); reads +g on z when level and at rest.
    pub accel: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelOdomSample {
    pub t: f64,
    pub speeds: WheelSpeeds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureObservation {
    /// Camera frame index.
    pub frame_id: u64,
    pub feature_id: u32,
    /// Normalized image-plane coordinates.
    pub uv: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub t: f64,
    pub frame_id: u64,
    pub observations: Vec<FeatureObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBiasState {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Kinematic truth at the IMU: pose in the world, world velocity and
/// acceleration of the IMU point, body angular rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuTruth {
    pub t: f64,
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

/// World pose of the IMU for a chassis ground-truth state.
pub fn imu_pose(gt: &GroundTruth, extrinsics: &Extrinsics) -> Pose {
    Pose::new(gt.orientation, gt.position).compose(&extrinsics.imu_odom.inverse())
}

/// World velocity of the IMU point (rigid-body transport from the chassis center).
pub fn imu_velocity(gt: &GroundTruth, extrinsics: &Extrinsics) -> Vector3<f64> {
    let lever = gt.orientation * extrinsics.imu_odom.inverse().translation;
    gt.velocity + (gt.orientation * gt.angular_velocity).cross(&lever)
}

pub fn camera_pose(gt: &GroundTruth, extrinsics: &Extrinsics) -> Pose {
    imu_pose(gt, extrinsics).compose(&extrinsics.imu_camera)
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng)) * sigma
}

/// One IMU reading; advances the bias random walk by `dt` afterwards.
///
/// White noise uses `density/√dt` per sample so the integrated noise is
/// independent of the rate.
pub fn sample_imu<R: Rng>(
    truth: &ImuTruth,
    noise: &NoiseConfig,
    bias: &mut ImuBiasState,
    dt: f64,
    rng: &mut R,
) -> ImuSample {
    let gravity = Vector3::new(0.0, 0.0, -crate::GRAVITY);
    let specific = truth.pose.rotation.inverse() * (truth.acceleration - gravity);
    let sqrt_dt = dt.sqrt();
    let gyro = truth.angular_velocity + bias.gyro + gaussian3(rng, noise.gyro_density / sqrt_dt);
    let accel = specific + bias.accel + gaussian3(rng, noise.accel_density / sqrt_dt);
    bias.gyro += gaussian3(rng, noise.gyro_bias_walk * sqrt_dt);
    bias.accel += gaussian3(rng, noise.accel_bias_walk * sqrt_dt);
    ImuSample {
        t: truth.t,
        gyro,
        accel,
    }
}

/// Encoder reading: lifted wheels read exactly zero.
pub fn sample_wheels<R: Rng>(
    gt: &GroundTruth,
    noise: &NoiseConfig,
    rng: &mut R,
) -> WheelOdomSample {
    let spin = gt.wheel_spin.to_array();
    let mut out = [0.0; 4];
    for i in 0..4 {
        let n = gaussian(rng) * noise.encoder_sigma;
        out[i] = match gt.wheel_contact[i] {
            WheelContact::Lifted => 0.0,
            _ => spin[i] + n,
        };
    }
    WheelOdomSample {
        t: gt.t,
        speeds: WheelSpeeds::from_array(out),
    }
}

pub fn generate_landmarks<R: Rng>(cfg: &LandmarkConfig, rng: &mut R) -> Vec<Vector3<f64>> {
    (0..cfg.count)
        .map(|_| Vector3::from_fn(|i, _| cfg.center[i] + (rng.random::<f64>() - 0.5) * cfg.size[i]))
        .collect()
}

/// Project the visible landmarks; feature ids are landmark indices, so
/// tracking across frames comes for free.
#[allow(clippy::too_many_arguments)]
pub fn sample_features<R: Rng>(
    gt: &GroundTruth,
    frame_id: u64,
    landmarks: &[Vector3<f64>],
    extrinsics: &Extrinsics,
    camera: &CameraConfig,
    pixel_sigma: f64,
    rng: &mut R,
) -> CameraFrame {
    let world_cam = camera_pose(gt, extrinsics);
    let cam_world = world_cam.inverse();
    let mut observations = Vec::new();
    for (id, l) in landmarks.iter().enumerate() {
        let p = cam_world.transform_point(l);
        if p.z < camera.min_depth || p.z > camera.max_depth {
            continue;
        }
        let uv = Vector2::new(p.x / p.z, p.y / p.z);
        if uv.x.abs() > camera.max_abs_u || uv.y.abs() > camera.max_abs_v {
            continue;
        }
        let noisy = uv + Vector2::new(gaussian(rng), gaussian(rng)) * pixel_sigma;
        observations.push(FeatureObservation {
            frame_id,
            feature_id: id as u32,
            uv: noisy,
        });
    }
    CameraFrame {
        t: gt.t,
        frame_id,
        observations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth_at_rest() -> ImuTruth {
        ImuTruth {
            t: 0.0,
            pose: Pose::identity(),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }

    #[test]
    fn stationary_imu_reads_gravity_reaction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bias = ImuBiasState::default();
        let s = sample_imu(
            &truth_at_rest(),
            &NoiseConfig::noiseless(),
            &mut bias,
            0.005,
            &mut rng,
        );
        assert_eq!(s.gyro, Vector3::zeros());
        assert_eq!(s.accel, Vector3::new(0.0, 0.0, 9.81));
    }

    #[test]
    fn pure_yaw_reads_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bias = ImuBiasState::default();
        let mut truth = truth_at_rest();
        truth.angular_velocity = Vector3::new(0.0, 0.0, 1.0);
        let s = sample_imu(
            &truth,
            &NoiseConfig::noiseless(),
            &mut bias,
            0.005,
            &mut rng,
        );
        assert_eq!(s.gyro, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn noisy_imu_is_reproducible() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut bias = ImuBiasState::default();
            (0..20)
                .map(|_| {
                    sample_imu(
                        &truth_at_rest(),
                        &NoiseConfig::default(),
                        &mut bias,
                        0.005,
                        &mut rng,
                    )
                })
                .collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a[0].accel != Vector3::new(0.0, 0.0, 9.81));
    }

    #[test]
    fn encoders_follow_contact_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = NoiseConfig::noiseless();
        let mut gt = GroundTruth::at_rest(0.0, 0.0, 0.0, 0.0);
        gt.wheel_spin = WheelSpeeds::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(
            sample_wheels(&gt, &noise, &mut rng).speeds,
            WheelSpeeds::new(1.0, 1.0, 1.0, 1.0)
        );
        gt.wheel_contact = [WheelContact::Lifted; 4];
        assert_eq!(
            sample_wheels(&gt, &NoiseConfig::default(), &mut rng).speeds,
            WheelSpeeds::default()
        );
    }

    #[test]
    fn projection_center_and_visibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ext = Extrinsics::default();
        let gt = GroundTruth::at_rest(0.0, 0.0, 0.0, 0.0);
        let cam = camera_pose(&gt, &ext);
        let ahead = cam.transform_point(&Vector3::new(0.0, 0.0, 2.0));
        let behind = cam.transform_point(&Vector3::new(0.0, 0.0, -2.0));
        let frame = sample_features(
            &gt,
            0,
            &[ahead, behind],
            &ext,
            &CameraConfig::default(),
            0.0,
            &mut rng,
        );
        assert_eq!(frame.observations.len(), 1);
        assert_eq!(frame.observations[0].feature_id, 0);
        assert!(frame.observations[0].uv.norm() < 1e-12);
    }

    #[test]
    fn features_are_reproducible() {
        let gen = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let lm = generate_landmarks(&LandmarkConfig::default(), &mut rng);
            let gt = GroundTruth::at_rest(0.0, 0.0, 0.0, 0.4);
            sample_features(
                &gt,
                3,
                &lm,
                &Extrinsics::default(),
                &CameraConfig::default(),
                1e-3,
                &mut rng,
            )
        };
        let (a, b) = (gen(), gen());
        assert_eq!(a, b);
        assert!(
            a.observations.len() >= 30,
            "{} visible",
            a.observations.len()
        );
    }
}
