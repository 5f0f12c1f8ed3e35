//! Fixed-step integration of the joint dynamics and multi-step rollouts.
//!
//! The action is held constant over each step (zero-order hold).

use serde::{Deserialize, Serialize};

use crate::dynamics::{accel_unchecked, Action, JointState, MotorParams, PlantConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    /// `q' = q + δ v`, `v' = v + δ a(q, v)`.
    #[default]
    Euler,
    /// Position update uses the post-step velocity: `q' = q + δ v'`.
    SemiImplicitEuler,
    /// Classical four-stage Runge-Kutta.
    Rk4,
}

/// States `s'₀ … s'_N` produced by `N` actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T> {
    pub states: Vec<JointState<T>>,
    pub actions: Vec<Action<T>>,
}

/// One integration step of length `cfg.delta`.
pub fn step<T: Scalar>(
    state: JointState<T>,
    action: Action<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
) -> Result<JointState<T>> {
    params.validate()?;
    cfg.validate()?;
    step_checked(state, action, params, cfg, kind, cfg.delta, 0)
}

/// Step of arbitrary length without parameter validation; non-finite output
/// is reported as divergence at `index`.
pub(crate) fn step_checked<T: Scalar>(
    state: JointState<T>,
    action: Action<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
    delta: T,
    index: usize,
) -> Result<JointState<T>> {
    let next = step_unchecked(state, action, params, cfg, kind, delta);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Divergence {
            segment: None,
            step: index,
            q: state.q.as_f64(),
            v: state.v.as_f64(),
            q_des: action.q_des.as_f64(),
        })
    }
}

#[inline]
pub(crate) fn step_unchecked<T: Scalar>(
    s: JointState<T>,
    action: Action<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
    delta: T,
) -> JointState<T> {
    match kind {
        IntegratorKind::Euler => {
            let a = accel_unchecked(s, action, params, cfg);
            JointState::new(s.q + delta * s.v, s.v + delta * a)
        }
        IntegratorKind::SemiImplicitEuler => {
            let a = accel_unchecked(s, action, params, cfg);
            let v = s.v + delta * a;
            JointState::new(s.q + delta * v, v)
        }
        IntegratorKind::Rk4 => {
            let half = delta * T::lit(0.5);
            let f = |x: JointState<T>| (x.v, accel_unchecked(x, action, params, cfg));
            let (k1q, k1v) = f(s);
            let (k2q, k2v) = f(JointState::new(s.q + half * k1q, s.v + half * k1v));
            let (k3q, k3v) = f(JointState::new(s.q + half * k2q, s.v + half * k2v));
            let (k4q, k4v) = f(JointState::new(s.q + delta * k3q, s.v + delta * k3v));
            let sixth = delta / T::lit(6.0);
            let two = T::lit(2.0);
            JointState::new(
                s.q + sixth * (k1q + two * k2q + two * k3q + k4q),
                s.v + sixth * (k1v + two * k2v + two * k3v + k4v),
            )
        }
    }
}

/// Rolls `actions` forward from `s0`; `states[0] == s0`.
pub fn rollout<T: Scalar>(
    s0: JointState<T>,
    actions: &[Action<T>],
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
) -> Result<Rollout<T>> {
    if actions.is_empty() {
        return Err(Error::InvalidConfig("rollout needs at least one action".into()));
    }
    params.validate()?;
    cfg.validate()?;
    let states = rollout_states(s0, actions, params, cfg, kind)?;
    Ok(Rollout {
        states,
        actions: actions.to_vec(),
    })
}

pub(crate) fn rollout_states<T: Scalar>(
    s0: JointState<T>,
    actions: &[Action<T>],
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
) -> Result<Vec<JointState<T>>> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(s0);
    let mut s = s0;
    for (i, &a) in actions.iter().enumerate() {
        s = step_checked(s, a, params, cfg, kind, cfg.delta, i)?;
        states.push(s);
    }
    Ok(states)
}
