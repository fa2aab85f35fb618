//! Chassis-anomaly detectors and the gating rule for the wheel factor.
//!
//! 1. Motion-constraint error accumulated by the wheel pre-integration.
//! 2. Position predicted from the last estimate by IMU vs. by wheels.
//! 3. State-free alignment of IMU and wheel pre-integrations over sub-segments.
//!
//! The wheel factor of an interval is gated when 1 fires, or when 2 and 3 both do.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::math::{mahalanobis_distance, Extrinsics};
use crate::preint::{ImuBias, PreintegratedImu, PreintegratedWheelOdom, O_P, O_V};
use crate::simworld::CameraFrame;
use crate::{Error, Result, GRAVITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorFlag {
    Triggered,
    Clear,
    NotEvaluable,
}

impl DetectorFlag {
    pub fn fired(self) -> bool {
        self == DetectorFlag::Triggered
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorFlag::Triggered => "triggered",
            DetectorFlag::Clear => "clear",
            DetectorFlag::NotEvaluable => "not-evaluable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub flag: DetectorFlag,
    pub statistic: f64,
    pub threshold: f64,
}

impl DetectorResult {
    /// Strict comparison: a statistic equal to the threshold is clear.
    pub fn compare(statistic: f64, threshold: f64) -> Self {
        let flag = if statistic > threshold {
            DetectorFlag::Triggered
        } else {
            DetectorFlag::Clear
        };
        Self {
            flag,
            statistic,
            threshold,
        }
    }

    pub fn not_evaluable(threshold: f64) -> Self {
        Self {
            flag: DetectorFlag::NotEvaluable,
            statistic: f64::NAN,
            threshold,
        }
    }

    pub fn with_flag(flag: DetectorFlag) -> Self {
        Self {
            flag,
            statistic: f64::NAN,
            threshold: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub d1: DetectorResult,
    pub d2: DetectorResult,
    pub d3: DetectorResult,
    /// Drop the wheel factor for this interval.
    pub fused: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyConfig {
    /// Absolute constraint-error floor (m).
    pub constraint_abs: f64,
    /// Constraint error relative to distance travelled.
    pub constraint_rel: f64,
    pub mahalanobis_threshold: f64,
    /// Parallax below which detector 2 may be unreliable (px).
    pub parallax_floor_px: f64,
    /// Accel variance below which detector 2 may be unreliable (m²/s⁴).
    pub accel_variance_floor: f64,
    /// Focal length converting normalized coordinates to pixels.
    pub focal_px: f64,
    /// Isotropic std added to the prediction covariance (m).
    pub prediction_floor: f64,
    /// Isotropic std added to the alignment covariance (m).
    pub alignment_floor: f64,
    /// Weight of the velocity rows in the alignment fit (m/s).
    pub alignment_velocity_sigma: f64,
    /// Weight of the position rows in the alignment fit (m).
    pub alignment_position_sigma: f64,
    pub min_segments: usize,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            constraint_abs: 0.02,
            constraint_rel: 0.01,
            mahalanobis_threshold: 1.5,
            parallax_floor_px: 0.5,
            accel_variance_floor: 0.05,
            focal_px: 460.0,
            prediction_floor: 0.01,
            alignment_floor: 0.01,
            alignment_velocity_sigma: 0.02,
            alignment_position_sigma: 0.01,
            min_segments: 3,
        }
    }
}

/// Detector 1: triggered iff the accumulated constraint error exceeds both
/// the absolute floor and the fraction of distance travelled.
pub fn detect_constraint(pre: &PreintegratedWheelOdom, cfg: &AnomalyConfig) -> DetectorResult {
    let threshold = cfg
        .constraint_abs
        .max(cfg.constraint_rel * pre.cum_distance);
    let fired = pre.cum_constraint_err > cfg.constraint_abs
        && pre.cum_constraint_err > cfg.constraint_rel * pre.cum_distance;
    DetectorResult {
        flag: if fired {
            DetectorFlag::Triggered
        } else {
            DetectorFlag::Clear
        },
        statistic: pre.cum_constraint_err,
        threshold,
    }
}

/// Motion excitation of an interval; detector 2 is unreliable when both are low.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub parallax_px: f64,
    pub accel_variance: f64,
}

impl Excitation {
    pub fn reliable(&self, cfg: &AnomalyConfig) -> bool {
        !(self.parallax_px < cfg.parallax_floor_px
            && self.accel_variance < cfg.accel_variance_floor)
    }
}

/// Mean rotation-compensated parallax (px) of features seen in both frames.
///
/// `rotation` is the orientation of the previous camera in the current one.
pub fn mean_parallax_px(
    prev: &CameraFrame,
    cur: &CameraFrame,
    rotation: &UnitQuaternion<f64>,
    focal_px: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut j = 0;
    let mut sorted: Vec<_> = cur.observations.iter().collect();
    sorted.sort_by_key(|o| o.feature_id);
    let mut prev_sorted: Vec<_> = prev.observations.iter().collect();
    prev_sorted.sort_by_key(|o| o.feature_id);
    for p in prev_sorted {
        while j < sorted.len() && sorted[j].feature_id < p.feature_id {
            j += 1;
        }
        if j < sorted.len() && sorted[j].feature_id == p.feature_id {
            let b = rotation * Vector3::new(p.uv.x, p.uv.y, 1.0);
            if b.z > 1e-6 {
                let moved = Vector2::new(b.x / b.z, b.y / b.z);
                sum += (sorted[j].uv - moved).norm() * focal_px;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Detector 2: Mahalanobis distance between the two position predictions.
pub fn detect_prediction_consistency(
    imu_pred_p: &Vector3<f64>,
    wheel_pred_p: &Vector3<f64>,
    cov: &Matrix3<f64>,
    excitation: &Excitation,
    cfg: &AnomalyConfig,
) -> Result<DetectorResult> {
    let d = mahalanobis_distance(&(imu_pred_p - wheel_pred_p), cov)?;
    if !excitation.reliable(cfg) {
        return Ok(DetectorResult {
            flag: DetectorFlag::NotEvaluable,
            statistic: d,
            threshold: cfg.mahalanobis_threshold,
        });
    }
    Ok(DetectorResult::compare(d, cfg.mahalanobis_threshold))
}

fn gravity_world() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

/// Motion of the IMU implied by a wheel pre-integration, in the IMU frame at
/// the start of the interval: `(displacement, end velocity, displacement covariance)`.
pub fn wheel_imu_motion(
    wheel: &PreintegratedWheelOdom,
    ext: &Extrinsics,
) -> (Vector3<f64>, Vector3<f64>, Matrix3<f64>) {
    let r_io = ext.imu_odom.rotation.to_rotation_matrix().into_inner();
    let p_io = ext.imu_odom.translation;
    let p_oi = -r_io.transpose() * p_io;
    let p = r_io * (wheel.delta_p + wheel.delta_q * p_oi) + p_io;
    let v = r_io * (wheel.end_velocity + wheel.delta_q * wheel.end_angular_velocity.cross(&p_oi));
    let cov = r_io * wheel.covariance.fixed_view::<3, 3>(0, 0) * r_io.transpose();
    (p, v, cov)
}

/// Position predictions for detector 2 from the last estimated IMU state.
///
/// Returns `(imu prediction, wheel prediction, combined covariance)`.
#[allow(clippy::too_many_arguments)]
pub fn predict_positions(
    p_i: &Vector3<f64>,
    q_i: &UnitQuaternion<f64>,
    v_i: &Vector3<f64>,
    bias: &ImuBias,
    imu: &PreintegratedImu,
    wheel: &PreintegratedWheelOdom,
    ext: &Extrinsics,
    cfg: &AnomalyConfig,
) -> (Vector3<f64>, Vector3<f64>, Matrix3<f64>) {
    let t = imu.dt_total;
    let (dp, _, _) = imu.corrected(bias);
    let imu_p = p_i + v_i * t + 0.5 * gravity_world() * t * t + q_i * dp;
    let (wp, _, wcov) = wheel_imu_motion(wheel, ext);
    let wheel_p = p_i + q_i * wp;
    let r = q_i.to_rotation_matrix().into_inner();
    let imu_cov = imu.covariance.fixed_view::<3, 3>(O_P, O_P).into_owned();
    let cov =
        r * (imu_cov + wcov) * r.transpose() + Matrix3::identity() * cfg.prediction_floor.powi(2);
    (imu_p, wheel_p, cov)
}

/// Detector 3: align consecutive IMU and wheel pre-integration segments.
///
/// The unknown initial IMU velocity is fitted by weighted least squares to the
/// position and velocity differences at every segment end, with gravity fixed
/// and the chassis assumed level at the start. The end-point position and
/// velocity deviation left after the fit is tested against the combined
/// covariance.
pub fn detect_alignment(
    imu_segments: &[PreintegratedImu],
    wheel_segments: &[PreintegratedWheelOdom],
    ext: &Extrinsics,
    cfg: &AnomalyConfig,
) -> Result<DetectorResult> {
    if imu_segments.len() != wheel_segments.len() {
        return Err(Error::DegenerateAlignment(format!(
            "{} imu segments vs {} wheel segments",
            imu_segments.len(),
            wheel_segments.len()
        )));
    }
    if imu_segments.len() < cfg.min_segments.max(1) {
        return Err(Error::DegenerateAlignment(format!(
            "{} segments, need {}",
            imu_segments.len(),
            cfg.min_segments
        )));
    }
    // the odometer frame is level at the start of the interval
    let g = ext.imu_odom.rotation * gravity_world();

    let mut t = 0.0;
    let mut dp = Vector3::zeros();
    let mut dv = Vector3::zeros();
    let mut dq = UnitQuaternion::identity();
    let mut wheel = PreintegratedWheelOdom::identity();
    let mut pos_cov = Matrix3::zeros();
    let mut vel_cov = Matrix3::zeros();
    let mut rows = Vec::with_capacity(imu_segments.len());
    for (im, wh) in imu_segments.iter().zip(wheel_segments) {
        let r = dq.to_rotation_matrix().into_inner();
        let seg_pp = r * im.covariance.fixed_view::<3, 3>(O_P, O_P) * r.transpose();
        let seg_vv = r * im.covariance.fixed_view::<3, 3>(O_V, O_V) * r.transpose();
        pos_cov += vel_cov * im.dt_total.powi(2) + seg_pp;
        vel_cov += seg_vv;
        dp += dv * im.dt_total + dq * im.delta_p;
        dv += dq * im.delta_v;
        dq *= im.delta_q;
        t += im.dt_total;
        wheel = wheel.compose(wh);
        let (pw, vw, _) = wheel_imu_motion(&wheel, ext);
        let e = pw - dp - 0.5 * g * t * t;
        let u = vw - dv - g * t;
        rows.push((t, e, u));
    }

    let wp = cfg.alignment_position_sigma.powi(-2);
    let wv = cfg.alignment_velocity_sigma.powi(-2);
    let (num, den) = rows
        .iter()
        .fold((Vector3::zeros(), 0.0), |(n, d), (t, e, u)| {
            (n + e * (t * wp) + u * wv, d + t * t * wp + wv)
        });
    let v0 = num / den;
    let (t_end, e_end, u_end) = rows[rows.len() - 1];
    let mut deviation = Vector6::zeros();
    deviation
        .fixed_rows_mut::<3>(0)
        .copy_from(&(e_end - v0 * t_end));
    deviation.fixed_rows_mut::<3>(3).copy_from(&(u_end - v0));
    let (_, _, wheel_cov) = wheel_imu_motion(&wheel, ext);
    let mut cov = Matrix6::zeros();
    cov.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(pos_cov + wheel_cov + Matrix3::identity() * cfg.alignment_floor.powi(2)));
    cov.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(vel_cov + Matrix3::identity() * cfg.alignment_velocity_sigma.powi(2)));
    Ok(DetectorResult::compare(
        mahalanobis_distance(&deviation, &cov)?,
        cfg.mahalanobis_threshold,
    ))
}

/// Gating rule: `d1 ∨ (d2 ∧ d3)`, with not-evaluable counting as clear.
pub fn fuse(d1: DetectorResult, d2: DetectorResult, d3: DetectorResult) -> AnomalyVerdict {
    let fused = d1.flag.fired() || (d2.flag.fired() && d3.flag.fired());
    AnomalyVerdict { d1, d2, d3, fused }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wheel_with(err: f64, dist: f64) -> PreintegratedWheelOdom {
        PreintegratedWheelOdom {
            cum_constraint_err: err,
            cum_distance: dist,
            ..PreintegratedWheelOdom::identity()
        }
    }

    #[test]
    fn constraint_examples() {
        let cfg = AnomalyConfig::default();
        assert!(detect_constraint(&wheel_with(0.025, 2.0), &cfg)
            .flag
            .fired());
        assert_eq!(
            detect_constraint(&wheel_with(0.015, 0.5), &cfg).flag,
            DetectorFlag::Clear
        );
        assert_eq!(
            detect_constraint(&wheel_with(0.03, 5.0), &cfg).flag,
            DetectorFlag::Clear
        );
        assert_eq!(
            detect_constraint(&wheel_with(0.02, 1.0), &cfg).flag,
            DetectorFlag::Clear
        );
        assert_eq!(
            detect_constraint(&wheel_with(0.0, 0.0), &cfg).flag,
            DetectorFlag::Clear
        );
    }

    #[test]
    fn prediction_boundary() {
        let cfg = AnomalyConfig::default();
        let ex = Excitation {
            parallax_px: 5.0,
            accel_variance: 0.0,
        };
        let cov = Matrix3::identity() * 0.04;
        let zero = Vector3::zeros();
        let at =
            detect_prediction_consistency(&Vector3::new(0.3, 0.0, 0.0), &zero, &cov, &ex, &cfg)
                .unwrap();
        assert_eq!(at.flag, DetectorFlag::Clear);
        let over =
            detect_prediction_consistency(&Vector3::new(0.31, 0.0, 0.0), &zero, &cov, &ex, &cfg)
                .unwrap();
        assert!(over.flag.fired());
        assert!((over.statistic - 1.55).abs() < 1e-12);
        let none = detect_prediction_consistency(&zero, &zero, &cov, &ex, &cfg).unwrap();
        assert_eq!(none.flag, DetectorFlag::Clear);
        assert!(matches!(
            detect_prediction_consistency(&zero, &zero, &Matrix3::zeros(), &ex, &cfg),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn low_excitation_is_not_evaluable() {
        let cfg = AnomalyConfig::default();
        let still = Excitation {
            parallax_px: 0.2,
            accel_variance: 0.01,
        };
        let r = detect_prediction_consistency(
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::zeros(),
            &Matrix3::identity(),
            &still,
            &cfg,
        )
        .unwrap();
        assert_eq!(r.flag, DetectorFlag::NotEvaluable);
        assert!(Excitation {
            parallax_px: 0.2,
            accel_variance: 0.1
        }
        .reliable(&cfg));
        assert!(Excitation {
            parallax_px: 0.6,
            accel_variance: 0.01
        }
        .reliable(&cfg));
    }

    #[test]
    fn fusion_truth_table() {
        for bits in 0..8u8 {
            let f = |b: bool| {
                DetectorResult::with_flag(if b {
                    DetectorFlag::Triggered
                } else {
                    DetectorFlag::Clear
                })
            };
            let (a, b, c) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
            assert_eq!(fuse(f(a), f(b), f(c)).fused, a || (b && c), "{a} {b} {c}");
        }
        let ne = DetectorResult::with_flag(DetectorFlag::NotEvaluable);
        let tr = DetectorResult::with_flag(DetectorFlag::Triggered);
        assert!(!fuse(ne, ne, tr).fused);
        assert!(!fuse(ne, tr, ne).fused);
    }
}
