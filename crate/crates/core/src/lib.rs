//! Differentiable single-joint motor simulator and gradient-based identification
//! of actuator parameters (armature, damping, friction loss and an optional
//! neural friction head) from trajectories and position commands alone.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the common double-precision instantiation.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod digest;
pub mod dynamics;
pub mod error;
pub mod excitation;
pub mod gradients;
pub mod integrators;
pub mod neural_friction;
pub mod run;
pub mod scalar;
pub mod sysid;

pub use dataset::{resample, segment, split, Segment, SegmentBatch, TrajectoryDataset};
pub use dynamics::{accel, friction_torque, gravity_torque, pd_torque, ARMATURE_FLOOR};
pub use error::{Error, Result};
pub use excitation::{FourierSpec, SyntheticTwinSpec};
pub use gradients::{finite_diff_grad, segment_loss_grad, total_loss_grad, ParamGradient};
pub use integrators::{rollout, step, IntegratorKind, Rollout};
pub use neural_friction::NeuralFrictionHead;
pub use scalar::Scalar;
pub use sysid::{evaluate, fit, EvalReport, FitConfig, FitReport};

pub type JointState = dynamics::JointState<f64>;
pub type Action = dynamics::Action<f64>;
pub type MotorParams = dynamics::MotorParams<f64>;
pub type PlantConfig = dynamics::PlantConfig<f64>;

pub type JointStateF32 = dynamics::JointState<f32>;
pub type ActionF32 = dynamics::Action<f32>;
pub type MotorParamsF32 = dynamics::MotorParams<f32>;
pub type PlantConfigF32 = dynamics::PlantConfig<f32>;
