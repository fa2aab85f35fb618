//! Residual definitions, analytic Jacobians, loss and Mahalanobis helpers.

mod common;

use common::*;
use mecanum_vio::estimator::{
    imu_residual, mahalanobis, plane_residual, robust_loss, schur_marginalize, wheel_residual,
    KeyframeState, LossKind, WheelFactor,
};
use mecanum_vio::math::{exp_so3, Extrinsics};
use mecanum_vio::preint::{imu_preintegrate, ImuBias, ImuNoise, PreintegratedWheelOdom};
use mecanum_vio::simworld::ImuSample;
use mecanum_vio::Error;
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector1, Vector2, Vector3};

#[test]
fn analytic_jacobians_match_finite_differences() {
    let worst = jacobian_suite(100, 11);
    for (name, w) in ["imu", "wheel", "visual", "plane"].iter().zip(worst) {
        assert!(w <= 1e-5, "{name}: {w:e}");
    }
}

#[test]
fn imu_residual_position_block_on_offset() {
    let samples: Vec<_> = (0..=60)
        .map(|k| ImuSample {
            t: k as f64 * 0.005,
            gyro: Vector3::zeros(),
            accel: Vector3::new(0.0, 0.0, 9.81),
        })
        .collect();
    let pre = imu_preintegrate(&samples, &ImuBias::default(), &ImuNoise::default()).unwrap();
    let g = Vector3::new(0.0, 0.0, -9.81);
    let xi = KeyframeState {
        q: yaw_quat(0.7),
        ..Default::default()
    };
    let at_rest = imu_residual(&pre, &xi, &xi, &g).unwrap();
    assert!(at_rest.r.norm() < 1e-12);
    let d = Vector3::new(0.1, -0.2, 0.05);
    let xj = KeyframeState { p: d, ..xi };
    let r = imu_residual(&pre, &xi, &xj, &g).unwrap();
    let expected = xi.q.inverse() * d;
    assert!((r.r.fixed_rows::<3>(0) - expected).norm() < 1e-12);

    let far = KeyframeState {
        b_g: Vector3::new(0.05, 0.0, 0.0),
        ..xi
    };
    assert!(matches!(
        imu_residual(&pre, &far, &xi, &g),
        Err(Error::ReintegrationRequired)
    ));
}

#[test]
fn wheel_residual_yaw_error_and_gating() {
    let ext = Extrinsics::default();
    let mut pre = PreintegratedWheelOdom::identity();
    pre.delta_p = Vector3::new(0.2, 0.0, 0.0);
    let factor = WheelFactor { pre, gated: false };
    let xi = KeyframeState::default();
    let xj = KeyframeState {
        p: Vector3::new(0.2, 0.0, 0.0),
        ..xi
    };
    assert!(wheel_residual(&factor, &xi, &xj, &ext).unwrap().r.norm() < 1e-15);
    let dtheta = 0.03;
    let xj_rot = KeyframeState {
        q: yaw_quat(dtheta),
        ..xj
    };
    let r = wheel_residual(&factor, &xi, &xj_rot, &ext).unwrap().r;
    assert!(r.fixed_rows::<3>(0).norm() < 1e-15);
    // 2·sin(θ/2) ≈ θ to third order
    assert!((r[5] - 2.0 * (dtheta / 2.0).sin()).abs() < 1e-15);
    assert!((r[5] - dtheta).abs() < 1e-5);
    let gated = WheelFactor {
        gated: true,
        ..factor
    };
    assert!(matches!(
        wheel_residual(&gated, &xi, &xj, &ext),
        Err(Error::GatedFactor)
    ));
}

#[test]
fn plane_residual_examples() {
    let x = KeyframeState {
        p: Vector3::new(1.0, 2.0, 0.02),
        ..Default::default()
    };
    let (r, j) = plane_residual(&x);
    assert_eq!(r, 0.02);
    assert!(((r / 0.01f64).powi(2).sqrt() - 2.0).abs() < 1e-12);
    assert_eq!(j[(0, 2)], 1.0);
    assert_eq!(j.iter().filter(|v| **v != 0.0).count(), 1);
    let flat = KeyframeState {
        p: Vector3::new(3.0, -1.0, 0.0),
        ..Default::default()
    };
    assert_eq!(plane_residual(&flat).0, 0.0);
}

#[test]
fn mahalanobis_examples_and_rotation_invariance() {
    assert_eq!(
        mahalanobis(&Vector1::new(0.0), &nalgebra::Matrix1::new(4.0)).unwrap(),
        0.0
    );
    assert!(
        (mahalanobis(&Vector1::new(2.0), &nalgebra::Matrix1::new(4.0)).unwrap() - 1.0).abs()
            < 1e-15
    );
    let mut rng = rng(4);
    for _ in 0..100 {
        let r = uniform3(&mut rng, 1.0);
        let a = Matrix3::from_fn(|_, _| rand::Rng::random::<f64>(&mut rng) - 0.5);
        let cov = a * a.transpose() + Matrix3::identity() * 0.1;
        let rot = exp_so3(&uniform3(&mut rng, 3.0))
            .to_rotation_matrix()
            .into_inner();
        let d0 = mahalanobis(&r, &cov).unwrap();
        let d1 = mahalanobis(&(rot * r), &(rot * cov * rot.transpose())).unwrap();
        assert!((d0 - d1).abs() < 1e-9 * d0.max(1.0));
    }
    assert!(matches!(
        mahalanobis(&Vector2::new(1.0, 0.0), &Matrix2::new(1.0, 0.0, 0.0, -1.0)),
        Err(Error::NotPositiveDefinite)
    ));
}

#[test]
fn robust_loss_examples() {
    assert_eq!(robust_loss(1.0, LossKind::Huber).0, 1.0);
    assert_eq!(robust_loss(1.0, LossKind::Truncated).0, 1.0);
    assert_eq!(robust_loss(4.0, LossKind::Huber), (3.0, 0.5));
    assert_eq!(robust_loss(4.0, LossKind::Truncated), (1.0, 0.0));
    assert_eq!(robust_loss(0.25, LossKind::Huber), (0.25, 1.0));
    // continuity and C¹ at s = 1
    let eps = 1e-7;
    let (lo, hi) = (
        robust_loss(1.0 - eps, LossKind::Huber).0,
        robust_loss(1.0 + eps, LossKind::Huber).0,
    );
    assert!((hi - lo) / (2.0 * eps) - 1.0 < 1e-6);
    let mut last = f64::INFINITY;
    for k in 0..200 {
        let s = k as f64 * 0.05;
        for kind in [LossKind::Huber, LossKind::Truncated] {
            let _ = robust_loss(s, kind);
        }
        let w = robust_loss(s, LossKind::Huber).1;
        assert!(w <= last);
        last = w;
    }
}

/// Two scalar states with a prior on `x0`, a relative measurement and a
/// prior on `x1`: marginalizing `x0` must leave the same posterior for `x1`.
#[test]
fn schur_marginalization_matches_full_solve() {
    // residuals: (x0 − 1)/0.5, (x1 − x0 − 2)/0.2, (x1 − 3.5)/1.0 linearized at 0
    let j = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, -5.0, 5.0, 0.0, 1.0]);
    let r = DVector::from_row_slice(&[-2.0, -10.0, -3.5]);
    let h = j.transpose() * &j;
    let g = j.transpose() * &r;
    let full = h.clone().cholesky().unwrap().solve(&-&g);
    let (hm, gm) = schur_marginalize(&h, &g, &[0]);
    let x1 = -gm[0] / hm[(0, 0)];
    assert!((x1 - full[1]).abs() < 1e-12);
    // marginalizing a variable nothing touches leaves the rest unchanged
    let mut h3 = DMatrix::zeros(3, 3);
    h3.view_mut((1, 1), (2, 2)).copy_from(&h);
    let mut g3 = DVector::zeros(3);
    g3.rows_mut(1, 2).copy_from(&g);
    let (hu, gu) = schur_marginalize(&h3, &g3, &[0]);
    assert_eq!(hu, h);
    assert_eq!(gu, g);
    assert!(hm.symmetric_eigenvalues().min() >= -1e-9);
}
