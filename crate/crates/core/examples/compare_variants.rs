//! Run every estimator variant on a preset scenario and print a comparison table.
//!
//! `cargo run --release --example compare_variants -- slip`

use std::time::Instant;

use mecanum_vio::harness::{
    detection_rates, presets, run_experiment, EstimatorVariant, PipelineConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "slip".into());
    let scenario = presets::by_name(&name).ok_or_else(|| format!("unknown preset `{name}`"))?;
    let started = Instant::now();
    let exp = run_experiment(
        &scenario,
        &EstimatorVariant::ALL,
        &PipelineConfig::default(),
    )?;
    println!(
        "scenario {name}: {:.1} m path, {:.1} s abnormal",
        exp.log.summary.displacement, exp.log.summary.abnormal_duration
    );
    println!(
        "{:<22}{:>10}{:>10}{:>10}{:>6}{:>6}{:>6}{:>7}",
        "variant", "err [m]", "rate [%]", "yaw [°]", "d1", "d2", "d3", "gated"
    );
    for r in &exp.results {
        let m = &r.metrics;
        println!(
            "{:<22}{:>10.3}{:>10.2}{:>10.2}{:>6}{:>6}{:>6}{:>7}",
            r.variant.name(),
            m.position_error,
            m.position_error_rate * 100.0,
            m.heading_error,
            m.d1_count,
            m.d2_count,
            m.d3_count,
            m.gated_count
        );
    }
    if let Some(r) = exp.get(EstimatorVariant::FullGated) {
        let (hit, false_alarm) = detection_rates(&scenario, &r.keyframes);
        println!(
            "detection: {:.0}% of faulty intervals, {:.1}% of clean intervals",
            hit * 100.0,
            false_alarm * 100.0
        );
    }
    println!("elapsed {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}
