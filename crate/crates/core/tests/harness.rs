//! Experiment runner, metrics and on-disk formats.

use mecanum_vio::harness::{
    compute_metrics, expected_orderings, presets, run_experiment, run_variants, EstimatorVariant,
    PipelineConfig,
};
use mecanum_vio::io::{
    metrics_text, parse_metrics, read_log, read_trajectory, write_log, write_trajectory,
};
use mecanum_vio::simworld::{run_scenario, ScenarioConfig};

fn short(name: &str, duration: f64) -> ScenarioConfig {
    let mut s = presets::by_name(name).unwrap();
    s.duration = duration;
    s.faults.retain(|f| f.end() <= duration);
    s
}

#[test]
fn clean_run_is_unchanged_by_gating() {
    let scenario = presets::by_name("clean").unwrap();
    let variants = [EstimatorVariant::FullGated, EstimatorVariant::FullUngated];
    let exp = run_experiment(&scenario, &variants, &PipelineConfig::default()).unwrap();
    let (g, u) = (exp.get(variants[0]).unwrap(), exp.get(variants[1]).unwrap());
    assert_eq!(g.metrics.gated_count, 0);
    assert!((g.metrics.position_error_rate - u.metrics.position_error_rate).abs() <= 1e-6);
    assert!((g.metrics.position_error - u.metrics.position_error).abs() <= 1e-6);
    assert!((g.metrics.heading_error - u.metrics.heading_error).abs() <= 1e-6);
    assert!(expected_orderings(&scenario, &exp)
        .iter()
        .all(|(_, ok)| *ok));
}

#[test]
fn error_rate_times_displacement_is_position_error() {
    let scenario = short("collision", 16.0);
    let exp = run_experiment(
        &scenario,
        &EstimatorVariant::ALL,
        &PipelineConfig::default(),
    )
    .unwrap();
    for r in &exp.results {
        let m = &r.metrics;
        assert!(m.displacement > 0.0);
        assert!(
            (m.position_error_rate * m.displacement - m.position_error).abs() <= 1e-9,
            "{}",
            r.variant
        );
    }
}

#[test]
fn variants_leave_the_shared_log_untouched() {
    let log = run_scenario(&short("slip", 14.0)).unwrap();
    let before = log.clone();
    let together = run_variants(&log, &EstimatorVariant::ALL, &PipelineConfig::default()).unwrap();
    assert_eq!(log, before);
    // each variant alone gives the same answer as when run alongside the others
    for r in &together {
        let alone = run_variants(&log, &[r.variant], &PipelineConfig::default()).unwrap();
        assert_eq!(alone[0].metrics, r.metrics, "{}", r.variant);
    }
}

#[test]
fn seed_override_changes_the_noise() {
    let a = short("clean", 3.0);
    let mut b = a.clone();
    b.seed += 1;
    let (la, lb) = (run_scenario(&a).unwrap(), run_scenario(&b).unwrap());
    assert_ne!(la.imu, lb.imu);
    assert_eq!(la.ground_truth.len(), lb.ground_truth.len());
}

#[test]
fn log_round_trips_through_disk() {
    let log = run_scenario(&short("abduction", 14.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_log(dir.path(), &log).unwrap();
    assert_eq!(read_log(dir.path()).unwrap(), log);
}

#[test]
fn trajectory_and_metrics_round_trip() {
    let log = run_scenario(&short("clean", 4.0)).unwrap();
    let result = &run_variants(
        &log,
        &[EstimatorVariant::FullGated],
        &PipelineConfig::default(),
    )
    .unwrap()[0];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    write_trajectory(&path, &result.trajectory).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().any(|l| l == "t,px,py,pz,qw,qx,qy,qz"));
    let back = read_trajectory(&path).unwrap();
    assert_eq!(back.len(), result.trajectory.len());
    for (a, b) in back.iter().zip(&result.trajectory) {
        assert_eq!(a.t, b.t);
        assert!((a.pose.translation - b.pose.translation).norm() == 0.0);
    }
    let recomputed = compute_metrics(&back, &log.ground_truth).unwrap();
    assert!((recomputed.position_error - result.metrics.position_error).abs() < 1e-12);

    let parsed = parse_metrics("metrics.txt", &metrics_text(&result.metrics)).unwrap();
    assert_eq!(parsed, result.metrics);
    assert!(parse_metrics("metrics.txt", "bogus_field=1\n").is_err());
}
