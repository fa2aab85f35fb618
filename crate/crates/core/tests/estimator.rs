//! Sliding-window estimator on short noiseless simulated runs.

mod common;

use mecanum_vio::anomaly::{fuse, AnomalyVerdict, DetectorFlag, DetectorResult};
use mecanum_vio::estimator::{EstimatorConfig, KeyframeInput, KeyframeState, SlidingWindow};
use mecanum_vio::harness::presets;
use mecanum_vio::math::exp_so3;
use mecanum_vio::preint::{
    imu_preintegrate, imu_slice, prefuse, wheel_preintegrate, ImuBias, ImuNoise, WheelNoise,
};
use mecanum_vio::simworld::{imu_pose, imu_velocity, run_scenario, NoiseConfig, SensorLog};
use nalgebra::Vector3;

fn noiseless_log(duration: f64) -> SensorLog {
    let mut cfg = presets::by_name("clean").unwrap();
    cfg.duration = duration;
    cfg.noise = NoiseConfig::noiseless();
    run_scenario(&cfg).unwrap()
}

fn truth_state(log: &SensorLog, t: f64) -> KeyframeState {
    let gt = log.truth_at(t);
    let pose = imu_pose(gt, &log.config.extrinsics);
    KeyframeState {
        p: pose.translation,
        q: pose.rotation,
        v: imu_velocity(gt, &log.config.extrinsics),
        b_a: Vector3::zeros(),
        b_g: Vector3::zeros(),
    }
}

fn verdict(fused: bool) -> AnomalyVerdict {
    let flag = if fused {
        DetectorFlag::Triggered
    } else {
        DetectorFlag::Clear
    };
    let d = DetectorResult::with_flag(flag);
    fuse(
        d,
        DetectorResult::with_flag(DetectorFlag::Clear),
        DetectorResult::with_flag(DetectorFlag::Clear),
    )
}

/// Window with a keyframe every `every` camera frames, states reset to ground
/// truth after each insertion. `gate(k)` decides the verdict of link `k`.
fn window_at_truth(
    log: &SensorLog,
    config: EstimatorConfig,
    keyframes: usize,
    every: usize,
    wheels: bool,
    gate: impl Fn(usize) -> bool,
) -> SlidingWindow {
    let ext = log.config.extrinsics;
    let first = &log.frames[0];
    let mut w = SlidingWindow::new(
        config,
        ext,
        first.t,
        truth_state(log, first.t),
        &first.observations,
    );
    let noise = ImuNoise {
        gyro_density: 1e-4,
        accel_density: 1e-3,
        gyro_bias_walk: 1e-6,
        accel_bias_walk: 1e-5,
    };
    for k in 1..keyframes {
        let (a, b) = (&log.frames[(k - 1) * every], &log.frames[k * every]);
        let imu =
            imu_preintegrate(imu_slice(&log.imu, a.t, b.t), &ImuBias::default(), &noise).unwrap();
        let wheel = wheels.then(|| {
            let pf = prefuse(&log.wheels, &log.imu, a.t, b.t, 0.02, &log.config.geometry).unwrap();
            wheel_preintegrate(
                &pf,
                &WheelNoise::default(),
                &ext.imu_odom.rotation,
                &Vector3::zeros(),
            )
            .unwrap()
        });
        w.add_keyframe(KeyframeInput {
            t: b.t,
            observations: b.observations.clone(),
            imu,
            wheel,
            verdict: wheels.then(|| verdict(gate(k))),
        })
        .unwrap();
        w.keyframes.back_mut().unwrap().state = truth_state(log, b.t);
    }
    w
}

fn states(w: &SlidingWindow) -> Vec<KeyframeState> {
    w.keyframes.iter().map(|k| k.state).collect()
}

#[test]
fn ground_truth_start_is_already_optimal() {
    let log = noiseless_log(5.0);
    let mut w = window_at_truth(&log, EstimatorConfig::default(), 8, 3, true, |_| false);
    let report = w.optimize().unwrap();
    // states start at the truth; the first step settles the triangulated depths
    assert!(
        report.accepted_costs[0] < 1e-2 * report.initial_cost,
        "{report:?}"
    );
    assert!(report.final_cost < 1.0, "{report:?}");
    let again = w.optimize().unwrap();
    assert!(again.iterations <= 1, "{again:?}");
    for (kf, est) in w.keyframes.iter().zip(states(&w)) {
        let truth = truth_state(&log, kf.t);
        assert!(
            (est.p - truth.p).norm() < 5e-3,
            "t={} off by {}",
            kf.t,
            (est.p - truth.p).norm()
        );
    }
}

#[test]
fn recovers_from_small_perturbation() {
    let log = noiseless_log(5.0);
    let mut reference = window_at_truth(&log, EstimatorConfig::default(), 8, 3, true, |_| false);
    reference.optimize().unwrap();
    reference.optimize().unwrap();
    let optimum = states(&reference);

    let mut rng = common::rng(3);
    let mut w = window_at_truth(&log, EstimatorConfig::default(), 8, 3, true, |_| false);
    for kf in w.keyframes.iter_mut().skip(1) {
        let dir = common::uniform3(&mut rng, 1.0).normalize();
        let axis = common::uniform3(&mut rng, 1.0).normalize();
        kf.state.p += dir * 0.01;
        kf.state.q *= exp_so3(&(axis * 1f64.to_radians()));
    }
    w.optimize().unwrap();
    w.optimize().unwrap();
    for (a, b) in states(&w).iter().zip(&optimum) {
        assert!(
            (a.p - b.p).norm() < 1e-4,
            "position gap {}",
            (a.p - b.p).norm()
        );
        assert!(
            a.q.angle_to(&b.q) < 1e-3,
            "rotation gap {}",
            a.q.angle_to(&b.q)
        );
        assert!((a.q.norm() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn accepted_costs_never_increase() {
    let log = noiseless_log(5.0);
    let mut w = window_at_truth(&log, EstimatorConfig::default(), 8, 3, true, |_| false);
    let mut rng = common::rng(11);
    for kf in w.keyframes.iter_mut().skip(1) {
        kf.state.p += common::uniform3(&mut rng, 0.05);
        kf.state.v += common::uniform3(&mut rng, 0.05);
    }
    let report = w.optimize().unwrap();
    assert!(!report.accepted_costs.is_empty());
    let mut last = report.initial_cost;
    for &c in &report.accepted_costs {
        assert!(c <= last, "{c} after {last}");
        last = c;
    }
    assert!(report.final_cost < report.initial_cost);
}

#[test]
fn gated_factor_matches_absent_factor() {
    let log = noiseless_log(5.0);
    let ext = log.config.extrinsics;
    let build = |gated: bool| {
        let first = &log.frames[0];
        let mut w = SlidingWindow::new(
            EstimatorConfig::default(),
            ext,
            first.t,
            truth_state(&log, first.t),
            &first.observations,
        );
        for k in 1..7 {
            let (a, b) = (&log.frames[(k - 1) * 3], &log.frames[k * 3]);
            let imu = imu_preintegrate(
                imu_slice(&log.imu, a.t, b.t),
                &ImuBias::default(),
                &ImuNoise::default(),
            )
            .unwrap();
            let pf = prefuse(&log.wheels, &log.imu, a.t, b.t, 0.02, &log.config.geometry).unwrap();
            let mut wheel = wheel_preintegrate(
                &pf,
                &WheelNoise::default(),
                &ext.imu_odom.rotation,
                &Vector3::zeros(),
            )
            .unwrap();
            let corrupt = k == 3;
            if corrupt {
                // a slipping interval: wheels report twice the travel
                wheel.delta_p *= 2.0;
            }
            let (wheel, v) = match (corrupt, gated) {
                (true, true) => (Some(wheel), Some(verdict(true))),
                (true, false) => (None, None),
                _ => (Some(wheel), Some(verdict(false))),
            };
            w.add_keyframe(KeyframeInput {
                t: b.t,
                observations: b.observations.clone(),
                imu,
                wheel,
                verdict: v,
            })
            .unwrap();
            w.optimize().unwrap();
        }
        w
    };
    let with_gated = build(true);
    let without = build(false);
    assert!(with_gated.links[2].wheel.is_some() && with_gated.links[2].active_wheel().is_none());
    assert!(without.links[2].wheel.is_none());
    assert_eq!(states(&with_gated), states(&without));
}

#[test]
fn wheel_factor_follows_verdict() {
    let log = noiseless_log(3.0);
    let w = window_at_truth(&log, EstimatorConfig::default(), 5, 2, true, |k| k % 2 == 0);
    for (k, link) in w.links.iter().enumerate() {
        let gated = (k + 1) % 2 == 0;
        assert!(link.wheel.is_some());
        assert_eq!(link.active_wheel().is_none(), gated, "link {k}");
    }
}

#[test]
fn window_size_is_bounded_and_prior_stays_psd() {
    let log = noiseless_log(8.0);
    let config = EstimatorConfig {
        window_size: 6,
        ..Default::default()
    };
    let ext = log.config.extrinsics;
    let first = &log.frames[0];
    let mut w = SlidingWindow::new(
        config,
        ext,
        first.t,
        truth_state(&log, first.t),
        &first.observations,
    );
    for k in 1..16 {
        let (a, b) = (&log.frames[(k - 1) * 3], &log.frames[k * 3]);
        let imu = imu_preintegrate(
            imu_slice(&log.imu, a.t, b.t),
            &ImuBias::default(),
            &ImuNoise::default(),
        )
        .unwrap();
        let pf = prefuse(&log.wheels, &log.imu, a.t, b.t, 0.02, &log.config.geometry).unwrap();
        let wheel = wheel_preintegrate(
            &pf,
            &WheelNoise::default(),
            &ext.imu_odom.rotation,
            &Vector3::zeros(),
        )
        .unwrap();
        w.add_keyframe(KeyframeInput {
            t: b.t,
            observations: b.observations.clone(),
            imu,
            wheel: Some(wheel),
            verdict: Some(verdict(false)),
        })
        .unwrap();
        w.optimize().unwrap();
        assert_eq!(w.len(), (k + 1).min(6));
        assert_eq!(w.links.len(), w.len() - 1);
        let prior = w.prior.as_ref().unwrap();
        assert_eq!(prior.h.nrows(), 15 * prior.keyframe_ids.len());
        let min = prior.h.clone().symmetric_eigenvalues().min();
        assert!(min >= -1e-9, "prior eigenvalue {min}");
        for kf in &w.keyframes {
            assert!((kf.state.q.norm() - 1.0).abs() < 1e-9);
        }
    }
    let truth = truth_state(&log, w.latest().t);
    assert!((w.latest().state.p - truth.p).norm() < 0.05);
}
