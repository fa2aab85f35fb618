//! Scenario runner: simulation once, then every estimator variant on the same log.

use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::anomaly::{
    detect_alignment, detect_constraint, detect_prediction_consistency, fuse, mean_parallax_px,
    predict_positions, AnomalyConfig, AnomalyVerdict, DetectorResult, Excitation,
};
use crate::estimator::{EstimatorConfig, KeyframeInput, KeyframeState, SlidingWindow};
use crate::kinematics::{forward_kinematics, ChassisTwist, WheelSpeeds};
use crate::math::{wrap_angle, yaw_of, Pose};
use crate::preint::{
    imu_preintegrate, imu_slice, prefuse, wheel_preintegrate, ImuBias, ImuNoise,
    PreintegratedWheelOdom, WheelNoise,
};
use crate::simworld::{
    imu_pose, imu_velocity, run_scenario, CameraFrame, FaultType, GroundTruth, NoiseConfig,
    ScenarioConfig, SensorLog, WheelContact,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorVariant {
    /// Planar dead reckoning from wheel speeds alone.
    WheelOdom,
    /// Wheel translation with gyro orientation.
    WheelInertialOdom,
    /// Camera and IMU only.
    VioNoWheel,
    /// Camera, IMU and wheels, wheel factor dropped on anomalies.
    FullGated,
    /// Camera, IMU and wheels, never gated.
    FullUngated,
}

impl EstimatorVariant {
    pub const ALL: [EstimatorVariant; 5] = [
        EstimatorVariant::WheelOdom,
        EstimatorVariant::WheelInertialOdom,
        EstimatorVariant::VioNoWheel,
        EstimatorVariant::FullGated,
        EstimatorVariant::FullUngated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorVariant::WheelOdom => "wheel-odom",
            EstimatorVariant::WheelInertialOdom => "wheel-inertial-odom",
            EstimatorVariant::VioNoWheel => "vio-no-wheel",
            EstimatorVariant::FullGated => "full-gated",
            EstimatorVariant::FullUngated => "full-ungated",
        }
    }

    fn uses_window(self) -> bool {
        matches!(
            self,
            EstimatorVariant::VioNoWheel
                | EstimatorVariant::FullGated
                | EstimatorVariant::FullUngated
        )
    }
}

impl fmt::Display for EstimatorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig {
                field: "variants".into(),
                reason: format!("unknown variant `{s}`"),
            })
    }
}

/// When a camera frame becomes a keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframePolicy {
    /// Camera frames that must pass before the parallax test applies.
    pub min_frames: usize,
    /// A keyframe is forced after this many camera frames.
    pub max_frames: usize,
    /// Rotation-compensated parallax that triggers an early keyframe (px).
    pub parallax_px: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            min_frames: 1,
            max_frames: 3,
            parallax_px: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub estimator: EstimatorConfig,
    pub anomaly: AnomalyConfig,
    pub wheel_noise: WheelNoise,
    pub keyframes: KeyframePolicy,
    /// Leading stationary span used to average out the gyro bias (s); 0 disables.
    pub gyro_calibration: f64,
    /// Encoder intervals per alignment segment of detector 3.
    pub alignment_group: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorConfig::default(),
            anomaly: AnomalyConfig::default(),
            wheel_noise: WheelNoise::default(),
            keyframes: KeyframePolicy::default(),
            gyro_calibration: 1.0,
            alignment_group: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    /// Chassis (odometer-frame) pose in the world.
    pub pose: Pose,
}

/// Estimator output at one keyframe, taken right after its optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeRecord {
    pub t: f64,
    /// Start of the link that ends at this keyframe.
    pub t_prev: f64,
    pub state: KeyframeState,
    pub verdict: Option<AnomalyVerdict>,
    pub gated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub position_error: f64,
    pub position_error_rate: f64,
    /// Signed final yaw difference, estimate minus truth (deg).
    pub heading_error: f64,
    pub ate_rmse: f64,
    pub run_time: f64,
    pub average_speed: f64,
    pub max_speed: f64,
    pub displacement: f64,
    pub accumulated_angle: f64,
    pub abnormal_duration: f64,
    pub keyframes: usize,
    pub d1_count: usize,
    pub d2_count: usize,
    pub d3_count: usize,
    pub gated_count: usize,
}

impl RunMetrics {
    /// `(name, value)` pairs in a fixed order for key-value output.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("position_error", self.position_error),
            ("position_error_rate", self.position_error_rate),
            ("heading_error", self.heading_error),
            ("ate_rmse", self.ate_rmse),
            ("run_time", self.run_time),
            ("average_speed", self.average_speed),
            ("max_speed", self.max_speed),
            ("displacement", self.displacement),
            ("accumulated_angle", self.accumulated_angle),
            ("abnormal_duration", self.abnormal_duration),
            ("keyframes", self.keyframes as f64),
            ("d1_count", self.d1_count as f64),
            ("d2_count", self.d2_count as f64),
            ("d3_count", self.d3_count as f64),
            ("gated_count", self.gated_count as f64),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: EstimatorVariant,
    pub metrics: RunMetrics,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Empty for the dead-reckoning variants.
    pub keyframes: Vec<KeyframeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub log: SensorLog,
    pub results: Vec<VariantResult>,
}

impl ExperimentResult {
    pub fn get(&self, variant: EstimatorVariant) -> Option<&VariantResult> {
        self.results.iter().find(|r| r.variant == variant)
    }
}

pub fn chassis_pose(gt: &GroundTruth) -> Pose {
    Pose::new(gt.orientation, gt.position)
}

/// Final-pose errors against ground truth plus the run's motion statistics.
pub fn compute_metrics(estimated: &[TrajectoryPoint], truth: &[GroundTruth]) -> Result<RunMetrics> {
    let last = estimated.last().ok_or(Error::EmptyTrajectory)?;
    if truth.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let nearest = |t: f64| -> &GroundTruth {
        let k = truth
            .partition_point(|g| g.t < t - 1e-9)
            .min(truth.len() - 1);
        if k > 0 && (truth[k - 1].t - t).abs() < (truth[k].t - t).abs() {
            &truth[k - 1]
        } else {
            &truth[k]
        }
    };
    let gt = nearest(last.t);
    let summary = crate::simworld::MotionSummary::from_truth(truth, 0.0);
    let position_error = (last.pose.translation - gt.position).norm();
    let heading_error = wrap_angle(yaw_of(&last.pose.rotation) - gt.yaw()).to_degrees();
    let sq: f64 = estimated
        .iter()
        .map(|p| (p.pose.translation - nearest(p.t).position).norm_squared())
        .sum();
    Ok(RunMetrics {
        position_error,
        position_error_rate: if summary.displacement > 0.0 {
            position_error / summary.displacement
        } else {
            0.0
        },
        heading_error,
        ate_rmse: (sq / estimated.len() as f64).sqrt(),
        run_time: summary.run_time,
        average_speed: summary.average_speed,
        max_speed: summary.max_speed,
        displacement: summary.displacement,
        accumulated_angle: summary.accumulated_angle,
        ..Default::default()
    })
}

fn imu_noise(n: &NoiseConfig) -> ImuNoise {
    // floors keep the information matrices finite on noiseless logs
    ImuNoise {
        gyro_density: n.gyro_density.max(1e-4),
        accel_density: n.accel_density.max(1e-3),
        gyro_bias_walk: n.gyro_bias_walk.max(1e-6),
        accel_bias_walk: n.accel_bias_walk.max(1e-5),
    }
}

/// Mean gyro reading over the leading span, if the chassis is still throughout.
pub fn calibrate_gyro_bias(log: &SensorLog, span: f64) -> Vector3<f64> {
    if span <= 0.0 {
        return Vector3::zeros();
    }
    let still = log
        .config
        .commands
        .iter()
        .all(|c| c.start >= span || (c.vx == 0.0 && c.vy == 0.0 && c.omega == 0.0));
    let samples = imu_slice(&log.imu, 0.0, span);
    if !still || samples.len() < 2 {
        return Vector3::zeros();
    }
    samples.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / samples.len() as f64
}

fn odom_pose(state_pose: &Pose, log: &SensorLog) -> Pose {
    state_pose.compose(&log.config.extrinsics.imu_odom)
}

/// Planar dead reckoning from encoder speeds (exact arcs per interval).
pub fn wheel_odometry(log: &SensorLog) -> Vec<TrajectoryPoint> {
    let geom = &log.config.geometry;
    let [mut x, mut y, mut yaw] = log.config.initial_pose;
    let mut out = vec![TrajectoryPoint {
        t: log.wheels[0].t,
        pose: planar_pose(x, y, yaw),
    }];
    for w in log.wheels.windows(2) {
        let (a, b) = (w[0].speeds.to_array(), w[1].speeds.to_array());
        let mean = WheelSpeeds::from_array([0, 1, 2, 3].map(|k| 0.5 * (a[k] + b[k])));
        let ChassisTwist { vx, vy, omega } = forward_kinematics(mean, geom);
        let dt = w[1].t - w[0].t;
        let th = omega * dt;
        let (s, c) = if th.abs() < 1e-9 {
            (1.0, 0.5 * th)
        } else {
            (th.sin() / th, (1.0 - th.cos()) / th)
        };
        let (dx, dy) = ((vx * s - vy * c) * dt, (vx * c + vy * s) * dt);
        x += yaw.cos() * dx - yaw.sin() * dy;
        y += yaw.sin() * dx + yaw.cos() * dy;
        yaw = wrap_angle(yaw + th);
        out.push(TrajectoryPoint {
            t: w[1].t,
            pose: planar_pose(x, y, yaw),
        });
    }
    out
}

fn planar_pose(x: f64, y: f64, yaw: f64) -> Pose {
    Pose::new(
        UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
        Vector3::new(x, y, 0.0),
    )
}

/// Wheel translation chained with gyro orientation, one chunk per camera period.
pub fn wheel_inertial_odometry(
    log: &SensorLog,
    cfg: &PipelineConfig,
) -> Result<Vec<TrajectoryPoint>> {
    let geom = &log.config.geometry;
    let ext = &log.config.extrinsics;
    let enc_period = 1.0 / log.config.rates.encoder_hz;
    let bias = calibrate_gyro_bias(log, cfg.gyro_calibration);
    let [x, y, yaw] = log.config.initial_pose;
    let start = planar_pose(x, y, yaw);
    let mut out = vec![TrajectoryPoint {
        t: 0.0,
        pose: start,
    }];
    let mut acc = PreintegratedWheelOdom::identity();
    for w in log.frames.windows(2) {
        let pf = prefuse(&log.wheels, &log.imu, w[0].t, w[1].t, enc_period, geom)?;
        let seg = wheel_preintegrate(&pf, &cfg.wheel_noise, &ext.imu_odom.rotation, &bias)?;
        acc = acc.compose(&seg);
        let rel = Pose::new(acc.delta_q, acc.delta_p);
        out.push(TrajectoryPoint {
            t: w[1].t,
            pose: start.compose(&rel),
        });
    }
    Ok(out)
}

/// Initial IMU state taken from ground truth.
pub fn initial_state(log: &SensorLog, gyro_bias: Vector3<f64>) -> KeyframeState {
    let gt = &log.ground_truth[0];
    let pose = imu_pose(gt, &log.config.extrinsics);
    KeyframeState {
        p: pose.translation,
        q: pose.rotation,
        v: imu_velocity(gt, &log.config.extrinsics),
        b_a: Vector3::zeros(),
        b_g: gyro_bias,
    }
}

fn camera_rotation_between(
    log: &SensorLog,
    t0: f64,
    t1: f64,
    bias: &ImuBias,
    noise: &ImuNoise,
) -> Option<UnitQuaternion<f64>> {
    let pre = imu_preintegrate(imu_slice(&log.imu, t0, t1), bias, noise).ok()?;
    let r_bc = log.config.extrinsics.imu_camera.rotation;
    // previous camera expressed in the current one
    Some(r_bc.inverse() * pre.delta_q.inverse() * r_bc)
}

fn parallax(
    log: &SensorLog,
    prev: &CameraFrame,
    cur: &CameraFrame,
    bias: &ImuBias,
    noise: &ImuNoise,
    focal: f64,
) -> f64 {
    camera_rotation_between(log, prev.t, cur.t, bias, noise)
        .map_or(0.0, |rot| mean_parallax_px(prev, cur, &rot, focal))
}

/// Run the sliding-window estimator over a log.
pub fn run_window(
    log: &SensorLog,
    variant: EstimatorVariant,
    cfg: &PipelineConfig,
) -> Result<Vec<KeyframeRecord>> {
    let ext = log.config.extrinsics;
    let geom = log.config.geometry;
    let noise = imu_noise(&log.config.noise);
    let enc_period = 1.0 / log.config.rates.encoder_hz;
    let with_wheels = matches!(
        variant,
        EstimatorVariant::FullGated | EstimatorVariant::FullUngated
    );
    let gating = variant == EstimatorVariant::FullGated;

    let gyro_bias = calibrate_gyro_bias(log, cfg.gyro_calibration);
    let first = &log.frames[0];
    let mut window = SlidingWindow::new(
        cfg.estimator,
        ext,
        first.t,
        initial_state(log, gyro_bias),
        &first.observations,
    );
    let mut records = vec![KeyframeRecord {
        t: first.t,
        t_prev: first.t,
        state: window.latest().state,
        verdict: None,
        gated: false,
    }];
    let mut last_kf = 0usize;

    for (k, frame) in log.frames.iter().enumerate().skip(1) {
        let since = k - last_kf;
        let prev = &log.frames[last_kf];
        let latest = window.latest().state;
        let bias = latest.bias();
        let par = if since >= cfg.keyframes.min_frames && since < cfg.keyframes.max_frames {
            parallax(log, prev, frame, &bias, &noise, cfg.anomaly.focal_px)
        } else {
            0.0
        };
        let is_last = k + 1 == log.frames.len();
        if since < cfg.keyframes.max_frames && par < cfg.keyframes.parallax_px && !is_last {
            continue;
        }
        let (t0, t1) = (prev.t, frame.t);
        let imu = imu_preintegrate(imu_slice(&log.imu, t0, t1), &bias, &noise)?;

        let (wheel, verdict) = if with_wheels {
            let pf = prefuse(&log.wheels, &log.imu, t0, t1, enc_period, &geom)?;
            let wheel =
                wheel_preintegrate(&pf, &cfg.wheel_noise, &ext.imu_odom.rotation, &latest.b_g)?;
            let d1 = detect_constraint(&wheel, &cfg.anomaly);
            let (ip, wp, cov) = predict_positions(
                &latest.p,
                &latest.q,
                &latest.v,
                &bias,
                &imu,
                &wheel,
                &ext,
                &cfg.anomaly,
            );
            let excitation = Excitation {
                parallax_px: parallax(log, prev, frame, &bias, &noise, cfg.anomaly.focal_px),
                accel_variance: imu.accel_variance(),
            };
            let d2 = detect_prediction_consistency(&ip, &wp, &cov, &excitation, &cfg.anomaly)?;
            let d3 = alignment_check(log, &pf, &bias, &noise, &latest.b_g, cfg)?;
            (Some(wheel), Some(fuse(d1, d2, d3)))
        } else {
            (None, None)
        };
        let gate_verdict = verdict.map(|v| {
            if gating {
                v
            } else {
                AnomalyVerdict { fused: false, ..v }
            }
        });
        window.add_keyframe(KeyframeInput {
            t: t1,
            observations: frame.observations.clone(),
            imu,
            wheel,
            verdict: gate_verdict,
        })?;
        window.optimize()?;
        records.push(KeyframeRecord {
            t: t1,
            t_prev: t0,
            state: window.latest().state,
            verdict,
            gated: gate_verdict.is_some_and(|v| v.fused),
        });
        last_kf = k;
    }
    Ok(records)
}

fn alignment_check(
    log: &SensorLog,
    pf: &[crate::preint::PreFusedWheelSample],
    bias: &ImuBias,
    noise: &ImuNoise,
    gyro_bias: &Vector3<f64>,
    cfg: &PipelineConfig,
) -> Result<DetectorResult> {
    let ext = &log.config.extrinsics;
    let group = cfg.alignment_group.max(1);
    let mut imu_segments = Vec::new();
    let mut wheel_segments = Vec::new();
    for chunk in pf.chunks(group) {
        let (t0, t1) = (chunk[0].t0, chunk[chunk.len() - 1].t1);
        imu_segments.push(imu_preintegrate(imu_slice(&log.imu, t0, t1), bias, noise)?);
        wheel_segments.push(wheel_preintegrate(
            chunk,
            &cfg.wheel_noise,
            &ext.imu_odom.rotation,
            gyro_bias,
        )?);
    }
    detect_alignment(&imu_segments, &wheel_segments, ext, &cfg.anomaly)
}

fn records_to_trajectory(log: &SensorLog, records: &[KeyframeRecord]) -> Vec<TrajectoryPoint> {
    records
        .iter()
        .map(|r| TrajectoryPoint {
            t: r.t,
            pose: odom_pose(&Pose::new(r.state.q, r.state.p), log),
        })
        .collect()
}

/// Run one variant on an existing log.
pub fn run_variant(
    log: &SensorLog,
    variant: EstimatorVariant,
    cfg: &PipelineConfig,
) -> Result<VariantResult> {
    let (trajectory, keyframes) = match variant {
        EstimatorVariant::WheelOdom => (wheel_odometry(log), Vec::new()),
        EstimatorVariant::WheelInertialOdom => (wheel_inertial_odometry(log, cfg)?, Vec::new()),
        _ => {
            let records = run_window(log, variant, cfg)?;
            (records_to_trajectory(log, &records), records)
        }
    };
    let mut metrics = compute_metrics(&trajectory, &log.ground_truth)?;
    metrics.abnormal_duration = log.summary.abnormal_duration;
    if variant.uses_window() {
        metrics.keyframes = keyframes.len();
        for v in keyframes.iter().filter_map(|k| k.verdict) {
            metrics.d1_count += usize::from(v.d1.flag.fired());
            metrics.d2_count += usize::from(v.d2.flag.fired());
            metrics.d3_count += usize::from(v.d3.flag.fired());
        }
        metrics.gated_count = keyframes.iter().filter(|k| k.gated).count();
    }
    Ok(VariantResult {
        variant,
        metrics,
        trajectory,
        keyframes,
    })
}

/// Simulate once and run every requested variant on the shared log.
pub fn run_experiment(
    scenario: &ScenarioConfig,
    variants: &[EstimatorVariant],
    cfg: &PipelineConfig,
) -> Result<ExperimentResult> {
    let log = run_scenario(scenario)?;
    let results = run_variants(&log, variants, cfg)?;
    Ok(ExperimentResult { log, results })
}

/// Variants run concurrently; results keep the requested order.
pub fn run_variants(
    log: &SensorLog,
    variants: &[EstimatorVariant],
    cfg: &PipelineConfig,
) -> Result<Vec<VariantResult>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = variants
            .iter()
            .map(|&v| s.spawn(move || run_variant(log, v, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("variant thread panicked"))
            .collect()
    })
}

/// Ground-truth label of a keyframe interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalLabel {
    /// Entirely inside an injected fault of this kind.
    Faulty(FaultType),
    /// No fault active anywhere in the interval.
    Clean,
    /// Partially overlapping a fault.
    Boundary,
}

pub fn label_interval(scenario: &ScenarioConfig, t0: f64, t1: f64) -> IntervalLabel {
    for f in &scenario.faults {
        if t0 >= f.start - 1e-9 && t1 <= f.end() + 1e-9 {
            return IntervalLabel::Faulty(f.kind);
        }
    }
    if scenario.faults.iter().any(|f| t1 > f.start && t0 < f.end()) {
        IntervalLabel::Boundary
    } else {
        IntervalLabel::Clean
    }
}

/// `(fused rate on faulty intervals, fused rate on clean intervals)`.
pub fn detection_rates(scenario: &ScenarioConfig, records: &[KeyframeRecord]) -> (f64, f64) {
    let (mut hit, mut faulty, mut false_alarm, mut clean) = (0, 0, 0, 0);
    for r in records.iter().filter(|r| r.verdict.is_some()) {
        let fused = r.verdict.is_some_and(|v| v.fused);
        match label_interval(scenario, r.t_prev, r.t) {
            IntervalLabel::Faulty(_) => {
                faulty += 1;
                hit += usize::from(fused);
            }
            IntervalLabel::Clean => {
                clean += 1;
                false_alarm += usize::from(fused);
            }
            IntervalLabel::Boundary => {}
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (rate(hit, faulty), rate(false_alarm, clean))
}

/// One sample of a controller step response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub t: f64,
    pub setpoint: ChassisTwist,
    /// Twist from the encoder speeds.
    pub measured: ChassisTwist,
    pub constraint_error: f64,
    pub slipping: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    pub samples: Vec<StepSample>,
    /// Relative error of the measured twist over the last 10% of the run.
    pub final_error: f64,
    pub max_constraint_error: f64,
}

/// Closed-loop response of the chassis to the scenario's commands, from the
/// encoder stream.
pub fn step_response(scenario: &ScenarioConfig) -> Result<StepResponse> {
    let log = run_scenario(scenario)?;
    let geom = &scenario.geometry;
    let samples: Vec<StepSample> = log
        .wheels
        .iter()
        .map(|w| {
            let gt = log.truth_at(w.t);
            StepSample {
                t: w.t,
                setpoint: scenario.setpoint_at(w.t),
                measured: forward_kinematics(w.speeds, geom),
                constraint_error: crate::kinematics::constraint_error(w.speeds),
                slipping: gt
                    .wheel_contact
                    .iter()
                    .any(|c| *c != WheelContact::Grounded),
            }
        })
        .collect();
    let tail_start = scenario.duration * 0.9;
    let tail: Vec<_> = samples.iter().filter(|s| s.t >= tail_start).collect();
    let final_error = tail
        .iter()
        .map(|s| {
            let sp = nalgebra::Vector3::from(s.setpoint.to_array());
            let m = nalgebra::Vector3::from(s.measured.to_array());
            (m - sp).norm() / sp.norm().max(1e-9)
        })
        .fold(0.0, f64::max);
    let max_constraint_error = samples
        .iter()
        .map(|s| s.constraint_error.abs())
        .fold(0.0, f64::max);
    Ok(StepResponse {
        samples,
        final_error,
        max_constraint_error,
    })
}

/// Orderings an experiment is expected to reproduce, as `(description, holds)`.
///
/// Faulty scenarios: the gated estimator beats wheel-only odometry. Fault-free
/// scenarios: gating changes nothing.
pub fn expected_orderings(
    scenario: &ScenarioConfig,
    exp: &ExperimentResult,
) -> Vec<(String, bool)> {
    let rate = |v| exp.get(v).map(|r| r.metrics.position_error_rate);
    let mut checks = Vec::new();
    let gated = rate(EstimatorVariant::FullGated);
    if scenario.faults.is_empty() {
        if let (Some(a), Some(b)) = (gated, rate(EstimatorVariant::FullUngated)) {
            checks.push((
                format!("full-gated {a:.6} == full-ungated {b:.6}"),
                (a - b).abs() <= 1e-6,
            ));
        }
    } else if let Some(g) = gated {
        for other in [
            EstimatorVariant::WheelOdom,
            EstimatorVariant::WheelInertialOdom,
        ] {
            if let Some(o) = rate(other) {
                checks.push((
                    format!("full-gated {:.4}% < {other} {:.4}%", g * 100.0, o * 100.0),
                    g < o,
                ));
            }
        }
    }
    checks
}

/// Built-in scenario presets shipped with the crate.
pub mod presets {
    use super::*;

    pub const CLEAN: &str = include_str!("../scenarios/clean.toml");
    pub const SLIP: &str = include_str!("../scenarios/slip.toml");
    pub const COLLISION: &str = include_str!("../scenarios/collision.toml");
    pub const ABDUCTION: &str = include_str!("../scenarios/abduction.toml");
    pub const STEP: &str = include_str!("../scenarios/step.toml");

    pub fn by_name(name: &str) -> Option<ScenarioConfig> {
        let text = match name {
            "clean" => CLEAN,
            "slip" => SLIP,
            "collision" => COLLISION,
            "abduction" => ABDUCTION,
            "step" => STEP,
            _ => return None,
        };
        Some(ScenarioConfig::from_toml(text).expect("shipped presets are valid"))
    }

    pub const NAMES: [&str; 5] = ["clean", "slip", "collision", "abduction", "step"];
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(n: usize, speed: f64) -> Vec<GroundTruth> {
        (0..n)
            .map(|k| {
                let mut g = GroundTruth::at_rest(k as f64 * 0.1, k as f64 * 0.1 * speed, 0.0, 0.0);
                g.velocity = Vector3::new(speed, 0.0, 0.0);
                g
            })
            .collect()
    }

    #[test]
    fn metrics_identical_trajectories() {
        let truth = straight(11, 1.0);
        let est: Vec<_> = truth
            .iter()
            .map(|g| TrajectoryPoint {
                t: g.t,
                pose: chassis_pose(g),
            })
            .collect();
        let m = compute_metrics(&est, &truth).unwrap();
        assert_eq!(m.position_error, 0.0);
        assert_eq!(m.heading_error, 0.0);
        assert!((m.displacement - 1.0).abs() < 1e-12);
        assert!((m.position_error_rate * m.displacement - m.position_error).abs() < 1e-9);
    }

    #[test]
    fn metrics_heading_offset() {
        let truth = straight(11, 1.0);
        let mut est: Vec<_> = truth
            .iter()
            .map(|g| TrajectoryPoint {
                t: g.t,
                pose: chassis_pose(g),
            })
            .collect();
        let last = est.last_mut().unwrap();
        last.pose.rotation = UnitQuaternion::from_euler_angles(0.0, 0.0, 10f64.to_radians());
        let m = compute_metrics(&est, &truth).unwrap();
        assert!((m.heading_error - 10.0).abs() < 1e-9);
        assert_eq!(m.position_error, 0.0);
        last_error_rate_example();
    }

    fn last_error_rate_example() {
        let truth = straight(2, 15.149 / 0.1);
        let mut end = chassis_pose(&truth[1]);
        end.translation.y += 2.137;
        let est = vec![TrajectoryPoint {
            t: truth[1].t,
            pose: end,
        }];
        let m = compute_metrics(&est, &truth).unwrap();
        assert!((m.position_error_rate * 100.0 - 14.11).abs() < 5e-3);
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        assert!(matches!(
            compute_metrics(&[], &straight(3, 1.0)),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in EstimatorVariant::ALL {
            assert_eq!(v.name().parse::<EstimatorVariant>().unwrap(), v);
        }
        assert!("bogus".parse::<EstimatorVariant>().is_err());
    }

    #[test]
    fn presets_parse() {
        for name in presets::NAMES {
            let cfg = presets::by_name(name).unwrap();
            cfg.validate().unwrap();
        }
    }
}
