//! Run the gated estimator on a log directory written by `simulate_log` and
//! print its final error.
//!
//! `cargo run --release --example estimate_from_log -- /tmp/collision-log`

use std::path::PathBuf;

use mecanum_vio::harness::{run_variant, EstimatorVariant, PipelineConfig};
use mecanum_vio::io::read_log;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .ok_or("usage: estimate_from_log <log dir>")?;
    let log = read_log(&dir)?;
    for variant in [EstimatorVariant::WheelOdom, EstimatorVariant::FullGated] {
        let m = run_variant(&log, variant, &PipelineConfig::default())?.metrics;
        println!(
            "{variant:<20} error {:.3} m ({:.2}%), heading {:+.2} deg, {} of {} intervals gated",
            m.position_error,
            m.position_error_rate * 100.0,
            m.heading_error,
            m.gated_count,
            m.keyframes
        );
    }
    Ok(())
}
