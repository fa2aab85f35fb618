//! Factor residuals with analytic Jacobians.
//!
//! Every Jacobian is taken with respect to the 15-dim local perturbation of
//! [`KeyframeState`]: `(δp, δθ, δv, δb_a, δb_g)` with `q ← q ⊗ exp(δθ)`.

use nalgebra::{Matrix3, Quaternion, SMatrix, SVector, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::math::{exp_so3, quat_left_block, quat_right_block, right_jacobian, skew, Extrinsics};
use crate::preint::{ImuBias, PreintegratedImu, PreintegratedWheelOdom, O_BA, O_BG, O_P, O_R, O_V};
use crate::{Error, Result};

pub type Vector15 = SVector<f64, 15>;
pub type Jac<const R: usize> = SMatrix<f64, R, 15>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeState {
    pub p: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
    pub v: Vector3<f64>,
    pub b_a: Vector3<f64>,
    pub b_g: Vector3<f64>,
}

impl Default for KeyframeState {
    fn default() -> Self {
        Self {
            p: Vector3::zeros(),
            q: UnitQuaternion::identity(),
            v: Vector3::zeros(),
            b_a: Vector3::zeros(),
            b_g: Vector3::zeros(),
        }
    }
}

impl KeyframeState {
    pub fn bias(&self) -> ImuBias {
        ImuBias::new(self.b_a, self.b_g)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    /// Apply a local perturbation; the quaternion is renormalized.
    pub fn boxplus(&self, d: &Vector15) -> Self {
        let dq = exp_so3(&d.fixed_rows::<3>(O_R).into_owned());
        let q = self.q.quaternion() * dq.quaternion();
        Self {
            p: self.p + d.fixed_rows::<3>(O_P),
            q: UnitQuaternion::new_normalize(q),
            v: self.v + d.fixed_rows::<3>(O_V),
            b_a: self.b_a + d.fixed_rows::<3>(O_BA),
            b_g: self.b_g + d.fixed_rows::<3>(O_BG),
        }
    }

    /// Local difference `self ⊖ base`, inverse of [`Self::boxplus`].
    pub fn boxminus(&self, base: &Self) -> Vector15 {
        let mut d = Vector15::zeros();
        d.fixed_rows_mut::<3>(O_P).copy_from(&(self.p - base.p));
        d.fixed_rows_mut::<3>(O_R)
            .copy_from(&crate::math::log_so3(&(base.q.inverse() * self.q)));
        d.fixed_rows_mut::<3>(O_V).copy_from(&(self.v - base.v));
        d.fixed_rows_mut::<3>(O_BA)
            .copy_from(&(self.b_a - base.b_a));
        d.fixed_rows_mut::<3>(O_BG)
            .copy_from(&(self.b_g - base.b_g));
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual<const R: usize> {
    pub r: SVector<f64, R>,
    pub j_i: Jac<R>,
    pub j_j: Jac<R>,
}

/// `2·vec(q)` with the sign fixed so the scalar part is non-negative.
fn twice_vec(q: &Quaternion<f64>) -> Vector3<f64> {
    let s = if q.w < 0.0 { -2.0 } else { 2.0 };
    q.imag() * s
}

fn positive(q: Quaternion<f64>) -> Quaternion<f64> {
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

/// Pre-integration residual between consecutive keyframes, ordered
/// `(δp, δθ, δv, δb_a, δb_g)` like the pre-integration covariance.
pub fn imu_residual(
    pre: &PreintegratedImu,
    x_i: &KeyframeState,
    x_j: &KeyframeState,
    gravity: &Vector3<f64>,
) -> Result<Residual<15>> {
    if pre.needs_reintegration(&x_i.bias()) {
        return Err(Error::ReintegrationRequired);
    }
    let t = pre.dt_total;
    let dbg = x_i.b_g - pre.linearization_bias.gyro;
    let (dp, dv, dq) = pre.corrected(&x_i.bias());
    let ri_t = x_i.rotation().transpose();
    let pos = x_j.p - x_i.p - x_i.v * t - 0.5 * gravity * t * t;
    let vel = x_j.v - x_i.v - gravity * t;
    let m = x_i.q.inverse() * x_j.q;
    let e = positive(dq.inverse().quaternion() * m.quaternion());

    let mut r = Vector15::zeros();
    r.fixed_rows_mut::<3>(O_P).copy_from(&(ri_t * pos - dp));
    r.fixed_rows_mut::<3>(O_R).copy_from(&twice_vec(&e));
    r.fixed_rows_mut::<3>(O_V).copy_from(&(ri_t * vel - dv));
    r.fixed_rows_mut::<3>(O_BA).copy_from(&(x_j.b_a - x_i.b_a));
    r.fixed_rows_mut::<3>(O_BG).copy_from(&(x_j.b_g - x_i.b_g));

    let qr = quat_right_block(&e);
    let ql = quat_left_block(&e);
    let rm_t = m.to_rotation_matrix().into_inner().transpose();
    let jr_bg = right_jacobian(&(pre.dq_dbg() * dbg));
    let i3 = Matrix3::identity();

    let mut j_i = Jac::<15>::zeros();
    j_i.fixed_view_mut::<3, 3>(O_P, O_P).copy_from(&-ri_t);
    j_i.fixed_view_mut::<3, 3>(O_P, O_R)
        .copy_from(&skew(&(ri_t * pos)));
    j_i.fixed_view_mut::<3, 3>(O_P, O_V).copy_from(&(-ri_t * t));
    j_i.fixed_view_mut::<3, 3>(O_P, O_BA)
        .copy_from(&-pre.dp_dba());
    j_i.fixed_view_mut::<3, 3>(O_P, O_BG)
        .copy_from(&-pre.dp_dbg());
    j_i.fixed_view_mut::<3, 3>(O_R, O_R)
        .copy_from(&(-qr * rm_t));
    j_i.fixed_view_mut::<3, 3>(O_R, O_BG)
        .copy_from(&(-ql * jr_bg * pre.dq_dbg()));
    j_i.fixed_view_mut::<3, 3>(O_V, O_R)
        .copy_from(&skew(&(ri_t * vel)));
    j_i.fixed_view_mut::<3, 3>(O_V, O_V).copy_from(&-ri_t);
    j_i.fixed_view_mut::<3, 3>(O_V, O_BA)
        .copy_from(&-pre.dv_dba());
    j_i.fixed_view_mut::<3, 3>(O_V, O_BG)
        .copy_from(&-pre.dv_dbg());
    j_i.fixed_view_mut::<3, 3>(O_BA, O_BA).copy_from(&-i3);
    j_i.fixed_view_mut::<3, 3>(O_BG, O_BG).copy_from(&-i3);

    let mut j_j = Jac::<15>::zeros();
    j_j.fixed_view_mut::<3, 3>(O_P, O_P).copy_from(&ri_t);
    j_j.fixed_view_mut::<3, 3>(O_R, O_R).copy_from(&qr);
    j_j.fixed_view_mut::<3, 3>(O_V, O_V).copy_from(&ri_t);
    j_j.fixed_view_mut::<3, 3>(O_BA, O_BA).copy_from(&i3);
    j_j.fixed_view_mut::<3, 3>(O_BG, O_BG).copy_from(&i3);

    Ok(Residual { r, j_i, j_j })
}

/// A wheel pre-integration attached to a keyframe link.
#[derive(Debug, Clone, PartialEq)]
pub struct WheelFactor {
    pub pre: PreintegratedWheelOdom,
    /// Removed from the problem by the anomaly gate.
    pub gated: bool,
}

/// Relative odometer-frame pose residual `(δp, δθ)`.
pub fn wheel_residual(
    factor: &WheelFactor,
    x_i: &KeyframeState,
    x_j: &KeyframeState,
    ext: &Extrinsics,
) -> Result<Residual<6>> {
    if factor.gated {
        return Err(Error::GatedFactor);
    }
    let pre = &factor.pre;
    let q_io = ext.imu_odom.rotation;
    let r_io_t = q_io.to_rotation_matrix().into_inner().transpose();
    let p_io = ext.imu_odom.translation;
    let ri = x_i.rotation();
    let rj = x_j.rotation();
    let u = ri.transpose() * (x_j.p + rj * p_io - x_i.p);
    let qo_i = x_i.q * q_io;
    let qo_j = x_j.q * q_io;
    let m = qo_i.inverse() * qo_j;
    let e = positive(pre.delta_q.inverse().quaternion() * m.quaternion());

    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0)
        .copy_from(&(r_io_t * (u - p_io) - pre.delta_p));
    r.fixed_rows_mut::<3>(3).copy_from(&twice_vec(&e));

    let qr = quat_right_block(&e);
    let rm_t = m.to_rotation_matrix().into_inner().transpose();
    let a = r_io_t * ri.transpose();

    let mut j_i = Jac::<6>::zeros();
    j_i.fixed_view_mut::<3, 3>(0, O_P).copy_from(&-a);
    j_i.fixed_view_mut::<3, 3>(0, O_R)
        .copy_from(&(r_io_t * skew(&u)));
    j_i.fixed_view_mut::<3, 3>(3, O_R)
        .copy_from(&(-qr * rm_t * r_io_t));

    let mut j_j = Jac::<6>::zeros();
    j_j.fixed_view_mut::<3, 3>(0, O_P).copy_from(&a);
    j_j.fixed_view_mut::<3, 3>(0, O_R)
        .copy_from(&(-a * rj * skew(&p_io)));
    j_j.fixed_view_mut::<3, 3>(3, O_R).copy_from(&(qr * r_io_t));

    Ok(Residual { r, j_i, j_j })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualResidual {
    pub r: Vector2<f64>,
    /// Anchor keyframe.
    pub j_i: Jac<2>,
    /// Observing keyframe.
    pub j_j: Jac<2>,
    /// Inverse depth.
    pub j_l: Vector2<f64>,
}

/// Smallest depth in the observing camera for a valid projection (m).
pub const MIN_PROJECTION_DEPTH: f64 = 1e-3;

/// Reprojection residual on the normalized image plane.
///
/// The point is `anchor_uv / λ` in the anchor camera. Returns `None` when it
/// lands behind the observing camera.
pub fn visual_residual(
    anchor_uv: &Vector2<f64>,
    observed_uv: &Vector2<f64>,
    x_i: &KeyframeState,
    x_j: &KeyframeState,
    inv_depth: f64,
    ext: &Extrinsics,
) -> Option<VisualResidual> {
    let r_bc = ext.imu_camera.rotation.to_rotation_matrix().into_inner();
    let p_bc = ext.imu_camera.translation;
    let ri = x_i.rotation();
    let rj = x_j.rotation();
    let f = Vector3::new(anchor_uv.x, anchor_uv.y, 1.0);
    let p_ci = f / inv_depth;
    let p_bi = r_bc * p_ci + p_bc;
    let p_w = ri * p_bi + x_i.p;
    let p_bj = rj.transpose() * (p_w - x_j.p);
    let p_cj = r_bc.transpose() * (p_bj - p_bc);
    if p_cj.z < MIN_PROJECTION_DEPTH {
        return None;
    }
    let z = p_cj.z;
    let r = Vector2::new(p_cj.x / z, p_cj.y / z) - observed_uv;
    let proj = SMatrix::<f64, 2, 3>::new(
        1.0 / z,
        0.0,
        -p_cj.x / (z * z),
        0.0,
        1.0 / z,
        -p_cj.y / (z * z),
    );
    let c = r_bc.transpose() * rj.transpose();

    let mut j_i = Jac::<2>::zeros();
    j_i.fixed_view_mut::<2, 3>(0, O_P).copy_from(&(proj * c));
    j_i.fixed_view_mut::<2, 3>(0, O_R)
        .copy_from(&(-proj * c * ri * skew(&p_bi)));
    let mut j_j = Jac::<2>::zeros();
    j_j.fixed_view_mut::<2, 3>(0, O_P).copy_from(&(-proj * c));
    j_j.fixed_view_mut::<2, 3>(0, O_R)
        .copy_from(&(proj * r_bc.transpose() * skew(&p_bj)));
    let j_l = proj * c * ri * r_bc * (-p_ci / inv_depth);
    Some(VisualResidual { r, j_i, j_j, j_l })
}

/// Plane residual `p_z` (the ground plane is `z = 0`).
pub fn plane_residual(x: &KeyframeState) -> (f64, Jac<1>) {
    let mut j = Jac::<1>::zeros();
    j[(0, O_P + 2)] = 1.0;
    (x.p.z, j)
}

/// Squared Mahalanobis norm `rᵀ Σ⁻¹ r`.
pub fn mahalanobis<const N: usize>(r: &SVector<f64, N>, cov: &SMatrix<f64, N, N>) -> Result<f64> {
    Ok(crate::math::mahalanobis_distance(r, cov)?.powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Huber,
    /// Zero gradient beyond one standard deviation.
    Truncated,
    /// Plain least squares.
    Trivial,
}

/// Robust loss of a squared Mahalanobis norm: `(value, IRLS weight)`.
pub fn robust_loss(s: f64, kind: LossKind) -> (f64, f64) {
    match kind {
        LossKind::Huber if s > 1.0 => {
            let root = s.sqrt();
            (2.0 * root - 1.0, 1.0 / root)
        }
        LossKind::Truncated if s >= 1.0 => (1.0, 0.0),
        _ => (s, 1.0),
    }
}

/// Upper-triangular `S` with `SᵀS = Σ⁻¹`, used to whiten residuals.
pub fn sqrt_information<const N: usize>(cov: &SMatrix<f64, N, N>) -> Result<SMatrix<f64, N, N>> {
    let info = cov.try_inverse().ok_or(Error::NotPositiveDefinite)?;
    let info = (info + info.transpose()) * 0.5;
    let chol = info.cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.l().transpose())
}
