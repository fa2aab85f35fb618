//! Small SO(3) helpers shared by the pre-integrators and residuals.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform; `rotation`/`translation` give the child frame in the parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self::new(r, -(r * self.translation))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.translation + self.rotation * other.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Serialized form: translation plus a `[w, x, y, z]` quaternion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PoseRecord {
    translation: [f64; 3],
    rotation: [f64; 4],
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        let [w, x, y, z] = r.rotation;
        Pose::new(
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
            Vector3::from(r.translation),
        )
    }
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseRecord {
            translation: p.translation.into(),
            rotation: [q.w, q.i, q.j, q.k],
        }
    }
}

/// Sensor mounting relative to the IMU (body) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Extrinsics {
    /// Camera pose in the IMU frame (camera z looks forward).
    pub imu_camera: Pose,
    /// Wheel-odometer (chassis center) pose in the IMU frame.
    pub imu_odom: Pose,
}

impl Default for Extrinsics {
    fn default() -> Self {
        // camera x = -body y, camera y = -body z, camera z = body x
        let r = UnitQuaternion::from_quaternion(Quaternion::new(0.5, -0.5, 0.5, -0.5));
        Self {
            imu_camera: Pose::new(r, Vector3::new(0.1, 0.0, 0.15)),
            imu_odom: Pose::identity(),
        }
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn exp_so3(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*phi)
}

/// Rotation vector of `q` (shortest path).
pub fn log_so3(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    q.scaled_axis()
}

/// Right Jacobian of SO(3): `exp(φ + δ) ≈ exp(φ)·exp(Jr(φ)·δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - (1.0 - theta.cos()) / t2 * k
        + (theta - theta.sin()) / (t2 * theta) * k * k
}

/// Left Jacobian of SO(3); `∫₀¹ exp(s·φ) ds`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    right_jacobian(&(-phi))
}

/// `(w·I + [v]×)` for `q = (w, v)`: derivative of `2·vec(q ⊗ (1, δ/2))` w.r.t. `δ`.
pub fn quat_right_block(q: &Quaternion<f64>) -> Matrix3<f64> {
    Matrix3::identity() * q.w + skew(&q.imag())
}

/// `(w·I − [v]×)`: derivative of `2·vec((1, δ/2) ⊗ q)` w.r.t. `δ`.
pub fn quat_left_block(q: &Quaternion<f64>) -> Matrix3<f64> {
    Matrix3::identity() * q.w - skew(&q.imag())
}

/// Yaw (rad) of a world-from-body rotation, z-up.
pub fn yaw_of(q: &UnitQuaternion<f64>) -> f64 {
    let r = q.to_rotation_matrix();
    r[(1, 0)].atan2(r[(0, 0)])
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut x =
        (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    if x <= -std::f64::consts::PI {
        x += 2.0 * std::f64::consts::PI;
    }
    x
}

/// Symmetrize in place.
pub fn symmetrize<const N: usize>(m: &mut nalgebra::SMatrix<f64, N, N>) {
    let t = m.transpose();
    *m = (*m + t) * 0.5;
}

/// `sqrt(rᵀ Σ⁻¹ r)`; fails when `cov` is not symmetric positive definite.
pub fn mahalanobis_distance<const N: usize>(
    r: &nalgebra::SVector<f64, N>,
    cov: &nalgebra::SMatrix<f64, N, N>,
) -> crate::Result<f64> {
    let chol = cov.cholesky().ok_or(crate::Error::NotPositiveDefinite)?;
    let y = chol
        .l()
        .solve_lower_triangular(r)
        .ok_or(crate::Error::NotPositiveDefinite)?;
    Ok(y.norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_jacobian_matches_finite_difference() {
        let phi = Vector3::new(0.3, -0.5, 0.8);
        let jr = right_jacobian(&phi);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = h;
            let lhs = exp_so3(&phi).inverse() * exp_so3(&(phi + d));
            let col = log_so3(&lhs) / h;
            for i in 0..3 {
                assert!((col[i] - jr[(i, k)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn default_camera_looks_forward() {
        let e = Extrinsics::default();
        let z_cam_in_body = e.imu_camera.rotation * Vector3::z();
        assert!((z_cam_in_body - Vector3::x()).norm() < 1e-12);
        let x_cam_in_body = e.imu_camera.rotation * Vector3::x();
        assert!((x_cam_in_body + Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn pose_inverse_composes_to_identity() {
        let p = Pose::new(
            exp_so3(&Vector3::new(0.1, 0.2, -0.3)),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let i = p.compose(&p.inverse());
        assert!(i.translation.norm() < 1e-12);
        assert!(i.rotation.angle() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(7.0) - (7.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-12);
    }
}
