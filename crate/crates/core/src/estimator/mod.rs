//! Sliding-window MAP estimator over keyframe states and feature inverse depths.
//!
//! Factors: marginalization prior, IMU pre-integration, wheel pre-integration
//! (dropped when the anomaly gate fires), reprojection and ground plane.
//! Reprojection and wheel factors are robustified.

mod residuals;
mod window;

pub use residuals::{
    imu_residual, mahalanobis, plane_residual, robust_loss, sqrt_information, visual_residual,
    wheel_residual, Jac, KeyframeState, LossKind, Residual, Vector15, VisualResidual, WheelFactor,
    MIN_PROJECTION_DEPTH,
};
pub use window::{
    schur_marginalize, EstimatorConfig, Feature, InitialPrior, Keyframe, KeyframeInput, Link,
    MarginalizationPrior, OptimizeReport, SlidingWindow,
};
