//! Wheel speeds for a chassis twist, and what the encoders say back when one
//! wheel slips.
//!
//! `cargo run --example kinematics`

use mecanum_vio::kinematics::{
    constraint_error, forward_kinematics, forward_kinematics_three_wheel, inverse_kinematics,
    torques_to_wrench, wrench_to_torques, ChassisGeometry, ChassisTwist, ChassisWrench, WheelIndex,
    WheelSpeeds,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let geom = ChassisGeometry::new(0.15, 0.12, 0.04)?;
    let twist = ChassisTwist::new(0.3, 0.1, 0.4);
    let speeds = inverse_kinematics(twist, &geom);
    println!("twist {:?}", twist.to_array());
    println!("wheel rim speeds FL FR RL RR: {:.4?}", speeds.to_array());
    println!("constraint error {:+.2e}", constraint_error(speeds));

    // front-left wheel spins 20% faster than the ground allows
    let mut s = speeds.to_array();
    s[0] *= 1.2;
    let slipping = WheelSpeeds::from_array(s);
    println!(
        "\nfront-left slipping, constraint error {:+.4} m/s",
        constraint_error(slipping)
    );
    println!(
        "least squares twist  {:.4?}",
        forward_kinematics(slipping, &geom).to_array()
    );
    for k in 1..=4 {
        let t = forward_kinematics_three_wheel(slipping, WheelIndex::new(k)?, &geom);
        println!("without wheel {k}      {:.4?}", t.to_array());
    }

    let wrench = ChassisWrench::new(20.0, -5.0, 1.5);
    let torques = wrench_to_torques(wrench, &geom);
    println!(
        "\nwrench {:?} -> torques {:.4?} -> {:.4?}",
        wrench.to_array(),
        torques.to_array(),
        torques_to_wrench(torques, &geom).to_array()
    );
    Ok(())
}
