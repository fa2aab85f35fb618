//! Per-keyframe detector statistics on a faulty run, alongside the
//! ground-truth label of each interval.
//!
//! `cargo run --release --example detectors -- abduction`

use mecanum_vio::harness::{
    label_interval, presets, run_window, EstimatorVariant, IntervalLabel, PipelineConfig,
};
use mecanum_vio::simworld::run_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "slip".into());
    let scenario = presets::by_name(&name).ok_or_else(|| format!("unknown preset `{name}`"))?;
    let log = run_scenario(&scenario)?;
    let records = run_window(
        &log,
        EstimatorVariant::FullGated,
        &PipelineConfig::default(),
    )?;
    println!("  t_start   t_end  label      constraint    predict    align  fused");
    for r in &records {
        let Some(v) = r.verdict else { continue };
        let label = match label_interval(&scenario, r.t_prev, r.t) {
            IntervalLabel::Faulty(k) => format!("{k:?}"),
            IntervalLabel::Clean => "clean".into(),
            IntervalLabel::Boundary => "boundary".into(),
        };
        if label == "clean" && !v.fused {
            continue;
        }
        println!(
            "{:8.2} {:7.2}  {:<9} {:>6.3}/{:<5.3} {:>6.2}{} {:>6.2}{}  {}",
            r.t_prev,
            r.t,
            label,
            v.d1.statistic,
            v.d1.threshold,
            v.d2.statistic,
            v.d2.flag.as_str().chars().next().unwrap_or(' '),
            v.d3.statistic,
            v.d3.flag.as_str().chars().next().unwrap_or(' '),
            if v.fused { "GATE" } else { "" }
        );
    }
    Ok(())
}
