//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use mecanum_vio::estimator::{
    imu_residual, plane_residual, visual_residual, wheel_residual, KeyframeState, Vector15,
    WheelFactor,
};
use mecanum_vio::math::{exp_so3, Extrinsics, Pose};
use mecanum_vio::preint::{
    imu_preintegrate, ImuBias, ImuNoise, PreintegratedImu, PreintegratedWheelOdom,
};
use mecanum_vio::simworld::ImuSample;
use nalgebra::{DMatrix, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform3<R: Rng>(rng: &mut R, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

pub fn random_state<R: Rng>(rng: &mut R) -> KeyframeState {
    KeyframeState {
        p: uniform3(rng, 2.0),
        q: exp_so3(&uniform3(rng, 1.0)),
        v: uniform3(rng, 1.0),
        b_a: uniform3(rng, 0.05),
        b_g: uniform3(rng, 0.004),
    }
}

/// Smooth random IMU signal over `duration` at 200 Hz.
pub fn random_imu<R: Rng>(rng: &mut R, duration: f64) -> Vec<ImuSample> {
    let (w0, w1, a0, a1) = (
        uniform3(rng, 0.5),
        uniform3(rng, 0.5),
        uniform3(rng, 1.0),
        uniform3(rng, 1.0),
    );
    let freq = 1.0 + rng.random::<f64>() * 3.0;
    let n = (duration / 0.005).round() as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 * 0.005;
            ImuSample {
                t,
                gyro: w0 + w1 * (freq * t).sin(),
                accel: a0 + a1 * (freq * t).cos() + Vector3::new(0.0, 0.0, 9.81),
            }
        })
        .collect()
}

pub fn random_pre<R: Rng>(rng: &mut R) -> PreintegratedImu {
    let s = random_imu(rng, 0.3);
    imu_preintegrate(&s, &ImuBias::default(), &ImuNoise::default()).unwrap()
}

/// State `j` consistent with `pre` from `x_i`, plus a small disturbance.
pub fn follow<R: Rng>(
    rng: &mut R,
    x_i: &KeyframeState,
    pre: &PreintegratedImu,
    noise: f64,
) -> KeyframeState {
    let t = pre.dt_total;
    let g = Vector3::new(0.0, 0.0, -9.81);
    let (dp, dv, dq) = pre.corrected(&x_i.bias());
    KeyframeState {
        p: x_i.p + x_i.v * t + 0.5 * g * t * t + x_i.q * dp + uniform3(rng, noise),
        v: x_i.v + g * t + x_i.q * dv + uniform3(rng, noise),
        q: x_i.q * dq * exp_so3(&uniform3(rng, noise)),
        b_a: x_i.b_a + uniform3(rng, noise * 0.1),
        b_g: x_i.b_g + uniform3(rng, noise * 0.01),
    }
}

pub fn random_extrinsics<R: Rng>(rng: &mut R) -> Extrinsics {
    Extrinsics {
        imu_camera: Pose::new(
            Extrinsics::default().imu_camera.rotation * exp_so3(&uniform3(rng, 0.1)),
            uniform3(rng, 0.2),
        ),
        imu_odom: Pose::new(exp_so3(&uniform3(rng, 0.2)), uniform3(rng, 0.2)),
    }
}

pub fn random_wheel<R: Rng>(rng: &mut R) -> PreintegratedWheelOdom {
    let mut w = PreintegratedWheelOdom::identity();
    w.delta_p = uniform3(rng, 0.3);
    w.delta_q = exp_so3(&uniform3(rng, 0.3));
    w.covariance = nalgebra::Matrix6::identity() * 1e-4;
    w.dt_total = 0.3;
    w
}

/// Central differences of `f` along the 15 local directions of `x`.
pub fn numeric_jacobian<F: Fn(&KeyframeState) -> Vec<f64>>(
    x: &KeyframeState,
    f: F,
) -> DMatrix<f64> {
    let h = 1e-6;
    let rows = f(x).len();
    let mut j = DMatrix::zeros(rows, 15);
    for c in 0..15 {
        let mut d = Vector15::zeros();
        d[c] = h;
        let plus = f(&x.boxplus(&d));
        let minus = f(&x.boxplus(&-d));
        for r in 0..rows {
            j[(r, c)] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    j
}

/// `max|A − N| / max(1, max|A|)`.
pub fn relative_gap(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let scale = analytic.amax().max(1.0);
    (analytic - numeric).amax() / scale
}

/// Worst relative Jacobian gap per factor kind over `cases` random states:
/// `[imu, wheel, visual, plane]`.
pub fn jacobian_suite(cases: usize, seed: u64) -> [f64; 4] {
    let mut rng = rng(seed);
    let mut worst = [0.0f64; 4];
    let g = Vector3::new(0.0, 0.0, -9.81);
    for _ in 0..cases {
        let pre = random_pre(&mut rng);
        let xi = random_state(&mut rng);
        let xj = follow(&mut rng, &xi, &pre, 0.05);
        let res = imu_residual(&pre, &xi, &xj, &g).unwrap();
        let ni = numeric_jacobian(&xi, |x| {
            imu_residual(&pre, x, &xj, &g)
                .unwrap()
                .r
                .iter()
                .copied()
                .collect()
        });
        let nj = numeric_jacobian(&xj, |x| {
            imu_residual(&pre, &xi, x, &g)
                .unwrap()
                .r
                .iter()
                .copied()
                .collect()
        });
        worst[0] = worst[0]
            .max(relative_gap(
                &DMatrix::from_iterator(15, 15, res.j_i.iter().copied()),
                &ni,
            ))
            .max(relative_gap(
                &DMatrix::from_iterator(15, 15, res.j_j.iter().copied()),
                &nj,
            ));

        let ext = random_extrinsics(&mut rng);
        let wf = WheelFactor {
            pre: random_wheel(&mut rng),
            gated: false,
        };
        let res = wheel_residual(&wf, &xi, &xj, &ext).unwrap();
        let ni = numeric_jacobian(&xi, |x| {
            wheel_residual(&wf, x, &xj, &ext)
                .unwrap()
                .r
                .iter()
                .copied()
                .collect()
        });
        let nj = numeric_jacobian(&xj, |x| {
            wheel_residual(&wf, &xi, x, &ext)
                .unwrap()
                .r
                .iter()
                .copied()
                .collect()
        });
        worst[1] = worst[1]
            .max(relative_gap(
                &DMatrix::from_iterator(6, 15, res.j_i.iter().copied()),
                &ni,
            ))
            .max(relative_gap(
                &DMatrix::from_iterator(6, 15, res.j_j.iter().copied()),
                &nj,
            ));

        // a landmark in front of both cameras
        let cam_i = Pose::new(xi.q, xi.p).compose(&ext.imu_camera);
        let depth = 1.0 + rng.random::<f64>() * 4.0;
        let anchor_uv = Vector2::new(
            rng.random::<f64>() * 0.6 - 0.3,
            rng.random::<f64>() * 0.4 - 0.2,
        );
        let point = cam_i.transform_point(&(Vector3::new(anchor_uv.x, anchor_uv.y, 1.0) * depth));
        let mut xj_v = xj;
        // observing camera: near the anchor, looking at the point
        xj_v.p = xi.p + uniform3(&mut rng, 0.2);
        xj_v.q = xi.q * exp_so3(&uniform3(&mut rng, 0.05));
        let cam_j = Pose::new(xj_v.q, xj_v.p).compose(&ext.imu_camera);
        let pc = cam_j.inverse().transform_point(&point);
        if pc.z < 0.3 {
            continue;
        }
        let obs = Vector2::new(pc.x / pc.z, pc.y / pc.z) + Vector2::new(1e-3, -2e-3);
        let lambda = 1.0 / depth;
        let res = visual_residual(&anchor_uv, &obs, &xi, &xj_v, lambda, &ext).unwrap();
        let eval = |a: &KeyframeState, b: &KeyframeState, l: f64| -> Vec<f64> {
            visual_residual(&anchor_uv, &obs, a, b, l, &ext)
                .unwrap()
                .r
                .iter()
                .copied()
                .collect()
        };
        let ni = numeric_jacobian(&xi, |x| eval(x, &xj_v, lambda));
        let nj = numeric_jacobian(&xj_v, |x| eval(&xi, x, lambda));
        let h = 1e-6;
        let (lp, lm) = (eval(&xi, &xj_v, lambda + h), eval(&xi, &xj_v, lambda - h));
        let nl = DMatrix::from_fn(2, 1, |r, _| (lp[r] - lm[r]) / (2.0 * h));
        worst[2] = worst[2]
            .max(relative_gap(
                &DMatrix::from_iterator(2, 15, res.j_i.iter().copied()),
                &ni,
            ))
            .max(relative_gap(
                &DMatrix::from_iterator(2, 15, res.j_j.iter().copied()),
                &nj,
            ))
            .max(relative_gap(
                &DMatrix::from_iterator(2, 1, res.j_l.iter().copied()),
                &nl,
            ));

        let (_, jp) = plane_residual(&xi);
        let np = numeric_jacobian(&xi, |x| vec![plane_residual(x).0]);
        worst[3] = worst[3].max(relative_gap(
            &DMatrix::from_iterator(1, 15, jp.iter().copied()),
            &np,
        ));
    }
    worst
}

pub fn yaw_quat(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(0.0, 0.0, yaw)
}
