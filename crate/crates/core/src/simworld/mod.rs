//! Deterministic ground-truth simulator of the Mecanum chassis and its sensors.
//!
//! A scenario couples the torque controller to a planar rigid-body plant with
//! per-wheel Coulomb friction and samples an IMU, four wheel encoders and a
//! synthetic camera that observes a fixed landmark field. Slip, collision and
//! abduction faults can be injected over time windows. A fixed seed makes every
//! output stream bit-identical across runs.

mod config;
mod plant;
mod scenario;
mod sensors;

pub use config::{
    CameraConfig, CommandSegment, FaultConfig, FaultType, LandmarkConfig, NoiseConfig, PlantConfig,
    RateConfig, ScenarioConfig,
};
pub use plant::{step, FaultEffects, GroundTruth, WheelContact};
pub use scenario::{run_scenario, MotionSummary, SensorLog};
pub use sensors::{
    camera_pose, generate_landmarks, imu_pose, imu_velocity, sample_features, sample_imu,
    sample_wheels, CameraFrame, FeatureObservation, ImuBiasState, ImuSample, ImuTruth,
    WheelOdomSample,
};
