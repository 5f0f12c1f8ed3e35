//! Equation of motion for a PD-driven rotary joint carrying a uniform rod.
//!
//! Angles are measured from the hanging-down equilibrium (`q = 0`). The rod is
//! pivoted at one end, so its inertia about the joint is `m L² / 3` and its
//! centre of mass sits at `L / 2`. Coulomb friction is smoothed with
//! `tanh(v / v_eps)` so every term is differentiable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural_friction::NeuralFrictionHead;
use crate::scalar::Scalar;

/// Lower bound on the armature (kg·m²).
pub const ARMATURE_FLOOR: f64 = 1e-8;

/// Joint angle (rad) and angular velocity (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState<T> {
    pub q: T,
    pub v: T,
}

impl<T: Scalar> JointState<T> {
    pub fn new(q: T, v: T) -> Self {
        Self { q, v }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.v.is_finite()
    }

    pub fn cast<U: Scalar>(self) -> JointState<U> {
        JointState {
            q: U::lit(self.q.as_f64()),
            v: U::lit(self.v.as_f64()),
        }
    }
}

/// Position command sent to the joint's PD controller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action<T> {
    pub q_des: T,
}

impl<T: Scalar> Action<T> {
    pub fn new(q_des: T) -> Self {
        Self { q_des }
    }

    pub fn cast<U: Scalar>(self) -> Action<U> {
        Action {
            q_des: U::lit(self.q_des.as_f64()),
        }
    }
}

/// Known physical context of the test bench. Never identified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig<T> {
    /// Rod mass (kg).
    pub rod_mass: T,
    /// Rod length (m).
    pub rod_length: T,
    /// Gravitational acceleration (m/s²).
    pub gravity: T,
    /// Proportional gain (N·m/rad).
    pub kp: T,
    /// Derivative gain (N·m·s/rad).
    pub kd: T,
    /// Symmetric actuator torque limit (N·m); `None` disables clamping.
    pub torque_limit: Option<T>,
    /// Velocity scale of the smoothed Coulomb term (rad/s).
    pub friction_smoothing_velocity: T,
    /// Integration step (s).
    pub delta: T,
}

impl Default for PlantConfig<f64> {
    fn default() -> Self {
        Self {
            rod_mass: 1.0,
            rod_length: 1.0,
            gravity: 9.81,
            kp: 20.0,
            kd: 1.0,
            torque_limit: None,
            friction_smoothing_velocity: 1e-3,
            delta: 1e-3,
        }
    }
}

impl<T: Scalar> PlantConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (
                self.rod_mass > T::zero() && self.rod_mass.is_finite(),
                "rod_mass must be finite and > 0",
            ),
            (
                self.rod_length > T::zero() && self.rod_length.is_finite(),
                "rod_length must be finite and > 0",
            ),
            (self.gravity.is_finite(), "gravity must be finite"),
            (self.kp >= T::zero(), "kp must be >= 0"),
            (self.kd >= T::zero(), "kd must be >= 0"),
            (
                self.friction_smoothing_velocity > T::zero(),
                "friction_smoothing_velocity must be > 0",
            ),
            (self.delta > T::zero(), "delta must be > 0"),
            (
                self.torque_limit.is_none_or(|l| l > T::zero()),
                "torque_limit must be > 0 when set",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidConfig(msg.into()));
            }
        }
        Ok(())
    }

    /// Rod inertia about the pivot, `m L² / 3`.
    pub fn load_inertia(&self) -> T {
        self.rod_mass * self.rod_length * self.rod_length / T::lit(3.0)
    }

    /// Gravity moment arm coefficient `m g L / 2`.
    fn gravity_moment(&self) -> T {
        self.rod_mass * self.gravity * self.rod_length * T::lit(0.5)
    }

    pub fn cast<U: Scalar>(&self) -> PlantConfig<U> {
        PlantConfig {
            rod_mass: U::lit(self.rod_mass.as_f64()),
            rod_length: U::lit(self.rod_length.as_f64()),
            gravity: U::lit(self.gravity.as_f64()),
            kp: U::lit(self.kp.as_f64()),
            kd: U::lit(self.kd.as_f64()),
            torque_limit: self.torque_limit.map(|l| U::lit(l.as_f64())),
            friction_smoothing_velocity: U::lit(self.friction_smoothing_velocity.as_f64()),
            delta: U::lit(self.delta.as_f64()),
        }
    }

    /// Mechanical energy of the rod-plus-rotor with the given armature (J).
    pub fn mechanical_energy(&self, state: JointState<T>, armature: T) -> T {
        T::lit(0.5) * (self.load_inertia() + armature) * state.v * state.v
            + self.gravity_moment() * (T::one() - state.q.cos())
    }
}

/// Identification target: armature, damping and friction loss, plus an optional
/// neural friction head that adds to the parametric friction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorParams<T> {
    /// Reflected rotor inertia (kg·m²).
    pub armature: T,
    /// Viscous coefficient (N·m·s/rad).
    pub damping: T,
    /// Coulomb friction magnitude (N·m).
    pub frictionloss: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neural_friction: Option<NeuralFrictionHead<T>>,
}

impl<T: Scalar> MotorParams<T> {
    pub fn new(armature: T, damping: T, frictionloss: T) -> Self {
        Self {
            armature,
            damping,
            frictionloss,
            neural_friction: None,
        }
    }

    /// Comparison model: no damping, no friction loss, minimal armature.
    pub fn baseline() -> Self {
        Self::new(T::lit(ARMATURE_FLOOR), T::zero(), T::zero())
    }

    pub fn with_neural_friction(mut self, head: NeuralFrictionHead<T>) -> Self {
        self.neural_friction = Some(head);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.armature >= T::lit(ARMATURE_FLOOR)) || !self.armature.is_finite() {
            return Err(Error::InvalidParams(format!(
                "armature {} below floor {ARMATURE_FLOOR}",
                self.armature
            )));
        }
        if !(self.damping >= T::zero()) || !self.damping.is_finite() {
            return Err(Error::InvalidParams(format!(
                "damping {} must be finite and >= 0",
                self.damping
            )));
        }
        if !(self.frictionloss >= T::zero()) || !self.frictionloss.is_finite() {
            return Err(Error::InvalidParams(format!(
                "frictionloss {} must be finite and >= 0",
                self.frictionloss
            )));
        }
        if let Some(head) = &self.neural_friction {
            head.validate()?;
        }
        Ok(())
    }

    /// Number of entries in the flat parameter vector.
    pub fn dimension(&self) -> usize {
        3 + self.neural_friction.as_ref().map_or(0, |h| h.weights.len())
    }

    /// Flat layout `[armature, damping, frictionloss, neural weights...]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = vec![
            self.armature.as_f64(),
            self.damping.as_f64(),
            self.frictionloss.as_f64(),
        ];
        if let Some(head) = &self.neural_friction {
            out.extend(head.weights.iter().map(|w| w.as_f64()));
        }
        out
    }

    /// Copy of `self` with values taken from a flat vector in [`Self::to_vector`] layout.
    pub fn with_vector(&self, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.dimension(), "parameter vector length");
        let mut out = self.clone();
        out.armature = T::lit(values[0]);
        out.damping = T::lit(values[1]);
        out.frictionloss = T::lit(values[2]);
        if let Some(head) = out.neural_friction.as_mut() {
            for (w, &x) in head.weights.iter_mut().zip(&values[3..]) {
                *w = T::lit(x);
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> MotorParams<U> {
        MotorParams {
            armature: U::lit(self.armature.as_f64()),
            damping: U::lit(self.damping.as_f64()),
            frictionloss: U::lit(self.frictionloss.as_f64()),
            neural_friction: self.neural_friction.as_ref().map(|h| h.cast()),
        }
    }
}

/// PD control law `kp (q_des - q) - kd v`, clamped to the torque limit.
pub fn pd_torque<T: Scalar>(state: JointState<T>, action: Action<T>, cfg: &PlantConfig<T>) -> T {
    let raw = cfg.kp * (action.q_des - state.q) - cfg.kd * state.v;
    match cfg.torque_limit {
        Some(limit) => raw.max(-limit).min(limit),
        None => raw,
    }
}

/// Gravity torque of the rod; zero when hanging straight down.
pub fn gravity_torque<T: Scalar>(q: T, cfg: &PlantConfig<T>) -> T {
    -cfg.gravity_moment() * q.sin()
}

/// Viscous plus smoothed Coulomb friction. Excludes the neural head.
pub fn friction_torque<T: Scalar>(v: T, params: &MotorParams<T>, cfg: &PlantConfig<T>) -> T {
    -params.damping * v - params.frictionloss * (v / cfg.friction_smoothing_velocity).tanh()
}

/// Angular acceleration of the joint. Rejects parameters that violate their floors.
pub fn accel<T: Scalar>(
    state: JointState<T>,
    action: Action<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
) -> Result<T> {
    params.validate()?;
    Ok(accel_unchecked(state, action, params, cfg))
}

#[inline]
pub(crate) fn accel_unchecked<T: Scalar>(
    state: JointState<T>,
    action: Action<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
) -> T {
    let mut torque = pd_torque(state, action, cfg)
        + gravity_torque(state.q, cfg)
        + friction_torque(state.v, params, cfg);
    if let Some(head) = &params.neural_friction {
        torque += head.torque(state.v);
    }
    torque / (cfg.load_inertia() + params.armature)
}

/// Acceleration together with its partial derivatives.
///
/// Derivatives with respect to the neural head weights are not included; they
/// are accumulated on demand through [`NeuralFrictionHead::accumulate_weight_grad`]
/// scaled by `1 / (I_load + armature)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AccelPartials<T> {
    pub d_q: T,
    pub d_v: T,
    pub d_armature: T,
    pub d_damping: T,
    pub d_frictionloss: T,
}

/// The head's torque and velocity slope are supplied by the caller, which
/// evaluates them together with the weight gradient.
pub(crate) fn accel_partials_with_head<T: Scalar>(
    state: JointState<T>,
    action: Action<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    (nn, nn_dv): (T, T),
) -> AccelPartials<T> {
    let raw_pd = cfg.kp * (action.q_des - state.q) - cfg.kd * state.v;
    // zero derivative inside the saturated region
    let (pd, pd_dq, pd_dv) = match cfg.torque_limit {
        Some(limit) if raw_pd > limit => (limit, T::zero(), T::zero()),
        Some(limit) if raw_pd < -limit => (-limit, T::zero(), T::zero()),
        _ => (raw_pd, -cfg.kp, -cfg.kd),
    };

    let grav = gravity_torque(state.q, cfg);
    let grav_dq = -cfg.gravity_moment() * state.q.cos();

    let inv_eps = T::one() / cfg.friction_smoothing_velocity;
    let th = (state.v * inv_eps).tanh();
    let fric = -params.damping * state.v - params.frictionloss * th;
    let fric_dv = -params.damping - params.frictionloss * (T::one() - th * th) * inv_eps;

    let inv_inertia = T::one() / (cfg.load_inertia() + params.armature);
    let accel = (pd + grav + fric + nn) * inv_inertia;
    AccelPartials {
        d_q: (pd_dq + grav_dq) * inv_inertia,
        d_v: (pd_dv + fric_dv + nn_dv) * inv_inertia,
        d_armature: -accel * inv_inertia,
        d_damping: -state.v * inv_inertia,
        d_frictionloss: -th * inv_inertia,
    }
}
