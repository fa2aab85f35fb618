//! Step response of the torque-mode wheel controller, on grip and on a slippery floor.
//!
//! `cargo run --release --example controller_step`

use mecanum_vio::harness::{presets, step_response};
use mecanum_vio::simworld::{FaultConfig, FaultType};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clean = presets::by_name("step").expect("step preset");
    let mut slippery = clean.clone();
    slippery.faults.push(FaultConfig {
        kind: FaultType::Slip,
        start: 0.0,
        duration: clean.duration,
        wheels: vec![1, 4],
        friction_scale: 0.1,
        carry: [0.0; 3],
        carry_ramp: 1.0,
        lift: 0.0,
        sway: 0.0,
        sway_hz: 0.0,
    });
    let grip = step_response(&clean)?;
    let slip = step_response(&slippery)?;
    println!("    t     vx_set  vx_meas  omega_meas  constraint");
    for s in grip.samples.iter().step_by(10) {
        println!(
            "{:5.2}  {:8.3} {:8.3} {:10.3} {:+11.5}",
            s.t, s.setpoint.vx, s.measured.vx, s.measured.omega, s.constraint_error
        );
    }
    println!("settled error {:.3}%", grip.final_error * 100.0);
    println!(
        "max |constraint error|: grip {:.5} m/s, slippery {:.5} m/s ({:.0}x)",
        grip.max_constraint_error,
        slip.max_constraint_error,
        slip.max_constraint_error / grip.max_constraint_error.max(1e-12)
    );
    Ok(())
}
