//! Visual-inertial-wheel odometry for Mecanum ground robots.
//!
//! The crate bundles everything needed to study wheel-speed anomalies on an
//! omnidirectional chassis: kinematics and a torque-split velocity controller,
//! a deterministic fault-injecting simulator, IMU and wheel-odometer
//! pre-integration, three anomaly detectors with their fusion rule, and a
//! sliding-window estimator that drops wheel factors flagged as anomalous.
//! [`harness`] ties them into repeatable experiments.
//!
//! See the `examples/` directory for one runnable program per capability.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomaly;
pub mod control;
pub mod estimator;
pub mod harness;
pub mod io;
pub mod kinematics;
pub mod math;
pub mod preint;
pub mod simworld;

use thiserror::Error;

/// Gravity magnitude used throughout (m/s²).
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("wheel index must be in 1..=4, got {0}")]
    InvalidWheelIndex(u8),
    #[error("{stream} stream has a gap of {gap:.4} s starting at t = {start:.4} s")]
    AlignmentGap {
        stream: &'static str,
        start: f64,
        gap: f64,
    },
    #[error("{stream} stream does not cover [{from:.4}, {to:.4}]")]
    StreamCoverage {
        stream: &'static str,
        from: f64,
        to: f64,
    },
    #[error("timestamps must be strictly increasing (t = {0})")]
    NonMonotonicTime(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("bias moved beyond first-order range; re-integrate from raw samples")]
    ReintegrationRequired,
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),
    #[error("gated wheel factor evaluated")]
    GatedFactor,
    #[error("optimizer failed: {0}")]
    Optimizer(String),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("parse error in {file} line {line}: {reason}")]
    Parse {
        file: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
