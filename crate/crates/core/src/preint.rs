//! IMU and wheel-odometer pre-integration between keyframes.
//!
//! # IMU
//!
//! Midpoint integration of bias-corrected samples in the frame of the first
//! sample. Gravity is *not* removed: `delta_v`/`delta_p` integrate the raw
//! specific force, so a level IMU at rest accumulates `+g·Δt` on z. The
//! residual adds the world gravity back (`p_j = p_i + v_i·Δt + ½·g·Δt² +
//! R_i·Δp`, with `g = (0, 0, -9.81)`).
//!
//! The error state is ordered `(δp, δθ, δv, δb_a, δb_g)`. Its 15×15 transition
//! Jacobian is accumulated alongside the covariance; the bias blocks give the
//! first-order correction used by [`PreintegratedImu::bias_correct`].
//!
//! # Wheel odometer
//!
//! Each pre-fused sample carries the chassis twist of one encoder interval and
//! the IMU averages over it. Orientation comes from the gyro; the planar twist
//! is integrated exactly for constant rates (`R_k·V(ω·dt)·v·dt`). The velocity
//! noise of every interval is inflated by `k_c·e²`, where `e` is the
//! motion-constraint error, so inconsistent wheel readings lose weight.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{
    constraint_error, forward_kinematics, ChassisGeometry, ChassisTwist, WheelSpeeds,
};
use crate::math::{exp_so3, left_jacobian, log_so3, right_jacobian, skew};
use crate::simworld::{ImuSample, WheelOdomSample};
use crate::{Error, Result};

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Matrix6 = SMatrix<f64, 6, 6>;

pub const O_P: usize = 0;
pub const O_R: usize = 3;
pub const O_V: usize = 6;
pub const O_BA: usize = 9;
pub const O_BG: usize = 12;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuBias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl ImuBias {
    pub fn new(accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { accel, gyro }
    }
}

/// Continuous-time IMU noise densities assumed by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoise {
    pub gyro_density: f64,
    pub accel_density: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            gyro_density: 1e-3,
            accel_density: 1e-2,
            gyro_bias_walk: 1e-5,
            accel_bias_walk: 1e-4,
        }
    }
}

/// Limits on `|new_bias − linearization_bias|` for first-order correction.
pub const GYRO_BIAS_REINTEGRATE: f64 = 1e-2;
pub const ACCEL_BIAS_REINTEGRATE: f64 = 1e-1;

#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedImu {
    pub dt_total: f64,
    pub delta_p: Vector3<f64>,
    pub delta_v: Vector3<f64>,
    pub delta_q: UnitQuaternion<f64>,
    pub covariance: Matrix15,
    /// Accumulated error-state transition; the bias columns are the bias Jacobians.
    pub jacobian: Matrix15,
    pub linearization_bias: ImuBias,
    pub noise: ImuNoise,
    /// Raw samples, kept for re-integration.
    pub samples: Vec<ImuSample>,
}

impl PreintegratedImu {
    pub fn dp_dba(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(O_P, O_BA).into_owned()
    }
    pub fn dp_dbg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(O_P, O_BG).into_owned()
    }
    pub fn dq_dbg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(O_R, O_BG).into_owned()
    }
    pub fn dv_dba(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(O_V, O_BA).into_owned()
    }
    pub fn dv_dbg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(O_V, O_BG).into_owned()
    }

    pub fn t_start(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn t_end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// First-order corrected deltas `(Δp, Δv, Δq)` at `bias`, without range check.
    pub fn corrected(&self, bias: &ImuBias) -> (Vector3<f64>, Vector3<f64>, UnitQuaternion<f64>) {
        let dba = bias.accel - self.linearization_bias.accel;
        let dbg = bias.gyro - self.linearization_bias.gyro;
        let dp = self.delta_p + self.dp_dba() * dba + self.dp_dbg() * dbg;
        let dv = self.delta_v + self.dv_dba() * dba + self.dv_dbg() * dbg;
        let dq = self.delta_q * exp_so3(&(self.dq_dbg() * dbg));
        (dp, dv, dq)
    }

    pub fn needs_reintegration(&self, bias: &ImuBias) -> bool {
        (bias.gyro - self.linearization_bias.gyro).norm() > GYRO_BIAS_REINTEGRATE
            || (bias.accel - self.linearization_bias.accel).norm() > ACCEL_BIAS_REINTEGRATE
    }

    /// Deltas moved to `new_bias` through the stored bias Jacobians.
    pub fn bias_correct(&self, new_bias: &ImuBias) -> Result<PreintegratedImu> {
        if self.needs_reintegration(new_bias) {
            return Err(Error::ReintegrationRequired);
        }
        let (dp, dv, dq) = self.corrected(new_bias);
        Ok(PreintegratedImu {
            delta_p: dp,
            delta_v: dv,
            delta_q: dq,
            linearization_bias: *new_bias,
            ..self.clone()
        })
    }

    /// Full re-integration of the stored samples at `bias`.
    pub fn reintegrate(&self, bias: &ImuBias) -> Result<PreintegratedImu> {
        imu_preintegrate(&self.samples, bias, &self.noise)
    }

    /// Deltas of `self` followed by `next` (means only).
    pub fn compose_deltas(
        &self,
        next: &PreintegratedImu,
    ) -> (Vector3<f64>, Vector3<f64>, UnitQuaternion<f64>) {
        let r = self.delta_q;
        (
            self.delta_p + self.delta_v * next.dt_total + r * next.delta_p,
            self.delta_v + r * next.delta_v,
            r * next.delta_q,
        )
    }

    /// Mean specific-force variance of the raw samples (sum over axes, m²/s⁴).
    pub fn accel_variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let mean = self.samples.iter().map(|s| s.accel).sum::<Vector3<f64>>() / n;
        self.samples
            .iter()
            .map(|s| (s.accel - mean).norm_squared())
            .sum::<f64>()
            / (n - 1.0)
    }
}

/// Midpoint pre-integration of `samples` with the given bias.
pub fn imu_preintegrate(
    samples: &[ImuSample],
    bias: &ImuBias,
    noise: &ImuNoise,
) -> Result<PreintegratedImu> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    for w in samples.windows(2) {
        if w[1].t <= w[0].t {
            return Err(Error::NonMonotonicTime(w[1].t));
        }
    }
    let mut p = Vector3::zeros();
    let mut v = Vector3::zeros();
    let mut q = UnitQuaternion::identity();
    let mut jac = Matrix15::identity();
    let mut cov = Matrix15::zeros();
    let i3 = Matrix3::identity();

    for w in samples.windows(2) {
        let (s0, s1) = (&w[0], &w[1]);
        let dt = s1.t - s0.t;
        let a0 = s0.accel - bias.accel;
        let a1 = s1.accel - bias.accel;
        let w_mid = 0.5 * (s0.gyro + s1.gyro) - bias.gyro;
        let q1 = q * exp_so3(&(w_mid * dt));
        let r0 = q.to_rotation_matrix().into_inner();
        let r1 = q1.to_rotation_matrix().into_inner();
        let acc = 0.5 * (r0 * a0 + r1 * a1);
        let p1 = p + v * dt + 0.5 * acc * dt * dt;
        let v1 = v + acc * dt;

        let ax0 = skew(&a0);
        let ax1 = skew(&a1);
        let dt2 = dt * dt;
        let rot_step = exp_so3(&(w_mid * dt))
            .to_rotation_matrix()
            .into_inner()
            .transpose();
        let jr_step = right_jacobian(&(w_mid * dt));

        let mut f = Matrix15::identity();
        f.fixed_view_mut::<3, 3>(O_P, O_R)
            .copy_from(&(-0.25 * r0 * ax0 * dt2 - 0.25 * r1 * ax1 * rot_step * dt2));
        f.fixed_view_mut::<3, 3>(O_P, O_V).copy_from(&(i3 * dt));
        f.fixed_view_mut::<3, 3>(O_P, O_BA)
            .copy_from(&(-0.25 * (r0 + r1) * dt2));
        f.fixed_view_mut::<3, 3>(O_P, O_BG)
            .copy_from(&(0.25 * r1 * ax1 * dt2 * dt));
        f.fixed_view_mut::<3, 3>(O_R, O_R).copy_from(&rot_step);
        f.fixed_view_mut::<3, 3>(O_R, O_BG)
            .copy_from(&(-jr_step * dt));
        f.fixed_view_mut::<3, 3>(O_V, O_R)
            .copy_from(&(-0.5 * r0 * ax0 * dt - 0.5 * r1 * ax1 * rot_step * dt));
        f.fixed_view_mut::<3, 3>(O_V, O_BA)
            .copy_from(&(-0.5 * (r0 + r1) * dt));
        f.fixed_view_mut::<3, 3>(O_V, O_BG)
            .copy_from(&(0.5 * r1 * ax1 * dt2));

        // Noise inputs: (n_a0, n_g0, n_a1, n_g1, n_ba, n_bg)
        let mut g = SMatrix::<f64, 15, 18>::zeros();
        let half_dt = 0.5 * dt;
        let pos_gyro = -0.25 * r1 * ax1 * dt2 * half_dt;
        let vel_gyro = -0.5 * r1 * ax1 * dt * half_dt;
        g.fixed_view_mut::<3, 3>(O_P, 0)
            .copy_from(&(0.25 * r0 * dt2));
        g.fixed_view_mut::<3, 3>(O_P, 3).copy_from(&pos_gyro);
        g.fixed_view_mut::<3, 3>(O_P, 6)
            .copy_from(&(0.25 * r1 * dt2));
        g.fixed_view_mut::<3, 3>(O_P, 9).copy_from(&pos_gyro);
        g.fixed_view_mut::<3, 3>(O_R, 3).copy_from(&(i3 * half_dt));
        g.fixed_view_mut::<3, 3>(O_R, 9).copy_from(&(i3 * half_dt));
        g.fixed_view_mut::<3, 3>(O_V, 0).copy_from(&(0.5 * r0 * dt));
        g.fixed_view_mut::<3, 3>(O_V, 3).copy_from(&vel_gyro);
        g.fixed_view_mut::<3, 3>(O_V, 6).copy_from(&(0.5 * r1 * dt));
        g.fixed_view_mut::<3, 3>(O_V, 9).copy_from(&vel_gyro);
        g.fixed_view_mut::<3, 3>(O_BA, 12).copy_from(&(i3 * dt));
        g.fixed_view_mut::<3, 3>(O_BG, 15).copy_from(&(i3 * dt));

        let acc_var = noise.accel_density.powi(2) / dt;
        let gyr_var = noise.gyro_density.powi(2) / dt;
        let ba_var = noise.accel_bias_walk.powi(2) / dt;
        let bg_var = noise.gyro_bias_walk.powi(2) / dt;
        let q_diag = SMatrix::<f64, 18, 1>::from_fn(|i, _| match i / 3 {
            0 | 2 => acc_var,
            1 | 3 => gyr_var,
            4 => ba_var,
            _ => bg_var,
        });

        jac = f * jac;
        cov = f * cov * f.transpose()
            + g * SMatrix::<f64, 18, 18>::from_diagonal(&q_diag) * g.transpose();

        p = p1;
        v = v1;
        q = q1;
    }
    crate::math::symmetrize(&mut cov);
    Ok(PreintegratedImu {
        dt_total: samples[samples.len() - 1].t - samples[0].t,
        delta_p: p,
        delta_v: v,
        delta_q: q,
        covariance: cov,
        jacobian: jac,
        linearization_bias: *bias,
        noise: *noise,
        samples: samples.to_vec(),
    })
}

/// IMU samples covering `[t0, t1]` (inclusive, small tolerance).
pub fn imu_slice(imu: &[ImuSample], t0: f64, t1: f64) -> &[ImuSample] {
    let a = imu.partition_point(|s| s.t < t0 - TIME_EPS);
    let b = imu.partition_point(|s| s.t <= t1 + TIME_EPS);
    &imu[a..b.max(a)]
}

/// Wheel interval packaged with the IMU averages over the same span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreFusedWheelSample {
    pub t0: f64,
    pub t1: f64,
    pub twist: ChassisTwist,
    pub gyro_avg: Vector3<f64>,
    pub accel_avg: Vector3<f64>,
    pub constraint_err: f64,
}

impl PreFusedWheelSample {
    pub fn dt(&self) -> f64 {
        self.t1 - self.t0
    }
}

fn check_stream(times: &[f64], name: &'static str, from: f64, to: f64, max_gap: f64) -> Result<()> {
    let covered = times.first().is_some_and(|&t| t <= from + TIME_EPS)
        && times.last().is_some_and(|&t| t >= to - TIME_EPS);
    if !covered {
        return Err(Error::StreamCoverage {
            stream: name,
            from,
            to,
        });
    }
    for w in times.windows(2) {
        if w[1] - w[0] > max_gap + TIME_EPS {
            return Err(Error::AlignmentGap {
                stream: name,
                start: w[0],
                gap: w[1] - w[0],
            });
        }
    }
    Ok(())
}

/// Trapezoidal average of a piecewise-linear signal over `[a, b]`.
fn average_over<F: Fn(&ImuSample) -> Vector3<f64>>(
    imu: &[ImuSample],
    a: f64,
    b: f64,
    field: F,
) -> Vector3<f64> {
    let value_at = |t: f64| -> Vector3<f64> {
        let k = imu.partition_point(|s| s.t <= t).clamp(1, imu.len() - 1);
        let (s0, s1) = (&imu[k - 1], &imu[k]);
        let u = ((t - s0.t) / (s1.t - s0.t)).clamp(0.0, 1.0);
        field(s0) * (1.0 - u) + field(s1) * u
    };
    let mut knots = vec![a];
    knots.extend(
        imu.iter()
            .map(|s| s.t)
            .filter(|&t| t > a + TIME_EPS && t < b - TIME_EPS),
    );
    knots.push(b);
    let mut sum = Vector3::zeros();
    for w in knots.windows(2) {
        sum += 0.5 * (value_at(w[0]) + value_at(w[1])) * (w[1] - w[0]);
    }
    sum / (b - a)
}

/// Align encoder and IMU streams over `[t_i, t_j]`, one entry per encoder interval.
///
/// The twist of each interval comes from the mean of its two encoder
/// readings. A gap longer than two encoder periods in either stream is an
/// alignment error.
pub fn prefuse(
    wheels: &[WheelOdomSample],
    imu: &[ImuSample],
    t_i: f64,
    t_j: f64,
    encoder_period: f64,
    geom: &ChassisGeometry,
) -> Result<Vec<PreFusedWheelSample>> {
    let a = wheels.partition_point(|s| s.t < t_i - TIME_EPS);
    let b = wheels.partition_point(|s| s.t <= t_j + TIME_EPS);
    let enc = &wheels[a..b.max(a)];
    let max_gap = 2.0 * encoder_period;
    check_stream(
        &enc.iter().map(|s| s.t).collect::<Vec<_>>(),
        "encoder",
        t_i,
        t_j,
        max_gap,
    )?;
    let imu_span = imu_slice(imu, t_i, t_j);
    check_stream(
        &imu_span.iter().map(|s| s.t).collect::<Vec<_>>(),
        "imu",
        t_i,
        t_j,
        max_gap,
    )?;
    if imu_span.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: imu_span.len(),
        });
    }

    Ok(enc
        .windows(2)
        .map(|w| {
            let s = w[0].speeds.to_array();
            let e = w[1].speeds.to_array();
            let mean = WheelSpeeds::from_array([0, 1, 2, 3].map(|k| 0.5 * (s[k] + e[k])));
            PreFusedWheelSample {
                t0: w[0].t,
                t1: w[1].t,
                twist: forward_kinematics(mean, geom),
                gyro_avg: average_over(imu_span, w[0].t, w[1].t, |s| s.gyro),
                accel_avg: average_over(imu_span, w[0].t, w[1].t, |s| s.accel),
                constraint_err: constraint_error(mean),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WheelNoise {
    /// Velocity white-noise density of the odometer twist (vx, vy, vz) in m/s/√Hz;
    /// the z entry models the flat-ground assumption.
    pub velocity_density: [f64; 3],
    /// Covariance inflation per squared constraint error.
    pub k_c: f64,
    pub gyro_density: f64,
    /// Variance multiplier on the gyro-driven orientation block.
    pub orientation_scale: f64,
}

impl Default for WheelNoise {
    fn default() -> Self {
        Self {
            velocity_density: [0.01, 0.01, 0.005],
            k_c: 25.0,
            gyro_density: 1e-3,
            orientation_scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedWheelOdom {
    pub dt_total: f64,
    /// Displacement in the odometer frame at the start of the interval.
    pub delta_p: Vector3<f64>,
    pub delta_q: UnitQuaternion<f64>,
    /// Covariance over `(δp, δθ)`.
    pub covariance: Matrix6,
    pub cum_distance: f64,
    pub cum_constraint_err: f64,
    /// Odometer velocity at the end of the interval, in the start frame.
    pub end_velocity: Vector3<f64>,
    /// Odometer angular rate at the end of the interval, in its own frame.
    pub end_angular_velocity: Vector3<f64>,
}

impl PreintegratedWheelOdom {
    pub fn identity() -> Self {
        Self {
            dt_total: 0.0,
            delta_p: Vector3::zeros(),
            delta_q: UnitQuaternion::identity(),
            covariance: Matrix6::zeros(),
            cum_distance: 0.0,
            cum_constraint_err: 0.0,
            end_velocity: Vector3::zeros(),
            end_angular_velocity: Vector3::zeros(),
        }
    }

    /// `self` followed by `next`, including covariance.
    pub fn compose(&self, next: &PreintegratedWheelOdom) -> PreintegratedWheelOdom {
        let r = self.delta_q.to_rotation_matrix().into_inner();
        let mut a = Matrix6::identity();
        a.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-r * skew(&next.delta_p)));
        a.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&next.delta_q.to_rotation_matrix().into_inner().transpose());
        let mut b = Matrix6::identity();
        b.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        let mut cov = a * self.covariance * a.transpose() + b * next.covariance * b.transpose();
        crate::math::symmetrize(&mut cov);
        PreintegratedWheelOdom {
            dt_total: self.dt_total + next.dt_total,
            delta_p: self.delta_p + r * next.delta_p,
            delta_q: self.delta_q * next.delta_q,
            covariance: cov,
            cum_distance: self.cum_distance + next.cum_distance,
            cum_constraint_err: self.cum_constraint_err + next.cum_constraint_err,
            end_velocity: r * next.end_velocity,
            end_angular_velocity: next.end_angular_velocity,
        }
    }
}

/// Integrate pre-fused wheel samples into a relative pose of the odometer frame.
///
/// `odom_rotation` is the odometer orientation in the IMU frame, used to bring
/// the gyro rate into the odometer frame; `gyro_bias` is removed first.
pub fn wheel_preintegrate(
    prefused: &[PreFusedWheelSample],
    noise: &WheelNoise,
    odom_rotation: &UnitQuaternion<f64>,
    gyro_bias: &Vector3<f64>,
) -> Result<PreintegratedWheelOdom> {
    if prefused.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut out = PreintegratedWheelOdom::identity();
    let mut r = Matrix3::identity();
    let mut q = UnitQuaternion::identity();
    let vel_var = Matrix3::from_diagonal(&Vector3::from(noise.velocity_density.map(|d| d * d)));
    let gyro_var = noise.gyro_density.powi(2) * noise.orientation_scale;
    for s in prefused {
        let dt = s.dt();
        if !(dt > 0.0) {
            return Err(Error::NonMonotonicTime(s.t1));
        }
        let omega = odom_rotation.inverse() * (s.gyro_avg - gyro_bias);
        let phi = omega * dt;
        let v = Vector3::new(s.twist.vx, s.twist.vy, 0.0);
        let jl = left_jacobian(&phi);
        let step = jl * v * dt;
        let rot = exp_so3(&phi);
        let rot_m = rot.to_rotation_matrix().into_inner();

        let mut f = Matrix6::identity();
        f.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-r * skew(&step)));
        f.fixed_view_mut::<3, 3>(3, 3).copy_from(&rot_m.transpose());
        let jr = right_jacobian(&phi);
        let q_v = (vel_var
            + Matrix3::identity() * (noise.k_c * s.constraint_err * s.constraint_err))
            * dt;
        let mut noise_cov = Matrix6::zeros();
        noise_cov
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(r * jl * q_v * jl.transpose() * r.transpose()));
        noise_cov
            .fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(jr * jr.transpose() * gyro_var * dt));
        out.covariance = f * out.covariance * f.transpose() + noise_cov;

        out.delta_p += r * step;
        q *= rot;
        r = q.to_rotation_matrix().into_inner();
        out.end_velocity = r * v;
        out.end_angular_velocity = omega;
        out.dt_total += dt;
        out.cum_distance += s.twist.linear_speed() * dt;
        out.cum_constraint_err += s.constraint_err.abs() * dt;
    }
    crate::math::symmetrize(&mut out.covariance);
    out.delta_q = q;
    Ok(out)
}

/// Relative rotation angle between two unit quaternions (rad).
pub fn rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    log_so3(&(a.inverse() * b)).norm()
}
