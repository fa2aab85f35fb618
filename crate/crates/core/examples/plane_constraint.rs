//! Height drift of the fused estimator with and without the planar-motion factor.
//!
//! `cargo run --release --example plane_constraint -- clean`

use mecanum_vio::harness::{presets, run_window, EstimatorVariant, PipelineConfig};
use mecanum_vio::simworld::run_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "clean".into());
    let scenario = presets::by_name(&name).ok_or_else(|| format!("unknown preset `{name}`"))?;
    let log = run_scenario(&scenario)?;
    for enabled in [true, false] {
        let mut cfg = PipelineConfig::default();
        cfg.estimator.plane_constraint = enabled;
        let records = run_window(&log, EstimatorVariant::FullGated, &cfg)?;
        let worst = records
            .iter()
            .map(|r| r.state.p.z.abs())
            .fold(0.0, f64::max);
        let last = records.last().map_or(0.0, |r| r.state.p.z);
        println!(
            "plane factor {:<5}  max |z| {:.4} m  final z {:+.4} m",
            enabled, worst, last
        );
    }
    Ok(())
}
