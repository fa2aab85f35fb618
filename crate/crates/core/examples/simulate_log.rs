//! Simulate a preset and write the sensor log to a directory.
//!
//! `cargo run --release --example simulate_log -- collision /tmp/collision-log`

use std::path::PathBuf;

use mecanum_vio::harness::presets;
use mecanum_vio::io::write_log;
use mecanum_vio::simworld::run_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "clean".into());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("{name}-log")));
    let scenario = presets::by_name(&name).ok_or_else(|| format!("unknown preset `{name}`"))?;
    let log = run_scenario(&scenario)?;
    write_log(&out, &log)?;
    let s = &log.summary;
    println!(
        "{} imu, {} wheel, {} camera samples -> {}",
        log.imu.len(),
        log.wheels.len(),
        log.frames.len(),
        out.display()
    );
    println!(
        "path {:.2} m, turned {:.1} deg, abnormal for {:.1} s",
        s.displacement, s.accumulated_angle, s.abnormal_duration
    );
    Ok(())
}
