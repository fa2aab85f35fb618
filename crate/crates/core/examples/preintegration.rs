//! Pre-integrate one camera interval of simulated IMU and wheel data and
//! compare the summaries against the ground-truth relative motion.
//!
//! `cargo run --release --example preintegration`

use mecanum_vio::harness::{chassis_pose, presets};
use mecanum_vio::preint::{
    imu_preintegrate, imu_slice, prefuse, wheel_preintegrate, ImuBias, ImuNoise, WheelNoise,
};
use mecanum_vio::simworld::{run_scenario, NoiseConfig};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scenario = presets::by_name("clean").ok_or("missing preset")?;
    scenario.duration = 8.0;
    scenario.noise = NoiseConfig::noiseless();
    let log = run_scenario(&scenario)?;
    let (t0, t1) = (log.frames[60].t, log.frames[63].t);

    let imu = imu_preintegrate(
        imu_slice(&log.imu, t0, t1),
        &ImuBias::default(),
        &ImuNoise::default(),
    )?;
    println!(
        "imu over [{t0:.2}, {t1:.2}]: dp {:.4?} dv {:.4?} rot {:.4} rad",
        imu.delta_p.as_slice(),
        imu.delta_v.as_slice(),
        imu.delta_q.angle()
    );
    println!("  position std {:.2e} m", imu.covariance[(0, 0)].sqrt());

    let fused = prefuse(&log.wheels, &log.imu, t0, t1, 0.02, &scenario.geometry)?;
    let ext = scenario.extrinsics;
    let wheel = wheel_preintegrate(
        &fused,
        &WheelNoise::default(),
        &ext.imu_odom.rotation,
        &Vector3::zeros(),
    )?;
    let (a, b) = (
        chassis_pose(log.truth_at(t0)),
        chassis_pose(log.truth_at(t1)),
    );
    let truth = a.inverse().compose(&b);
    println!(
        "wheel: dp {:.4?} vs truth {:.4?}",
        wheel.delta_p.as_slice(),
        truth.translation.as_slice()
    );
    println!(
        "  yaw {:.5} vs truth {:.5} rad",
        wheel.delta_q.euler_angles().2,
        truth.rotation.euler_angles().2
    );
    println!(
        "  distance {:.4} m, accumulated constraint error {:.2e} m",
        wheel.cum_distance, wheel.cum_constraint_err
    );
    Ok(())
}
