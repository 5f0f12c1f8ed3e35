//! Segmented trajectory-matching loss and its exact gradient.
//!
//! For a segment `(s₀, a₀…a_{N-1}, s₁…s_N)` the loss is
//! `Σᵢ ‖s'ᵢ − sᵢ‖²` with `s'₀ = s₀` and `s'ᵢ₊₁ = Φ(s'ᵢ, aᵢ)`. The gradient with
//! respect to the motor parameters is accumulated by a hand-written adjoint
//! sweep backwards over the recorded rollout. Plant constants are never
//! differentiated.
//!
//! Loss and adjoints are accumulated in `f64` whatever the storage scalar.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Segment;
use crate::dynamics::{accel_partials_with_head, Action, JointState, MotorParams, PlantConfig, ARMATURE_FLOOR};
use crate::error::{Error, Result};
use crate::integrators::{rollout_states, IntegratorKind};
use crate::scalar::Scalar;

/// Partial derivatives of a scalar loss with respect to [`MotorParams`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamGradient {
    pub d_armature: f64,
    pub d_damping: f64,
    pub d_frictionloss: f64,
    /// Present iff the neural friction head is active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_neural: Option<Vec<f64>>,
}

impl ParamGradient {
    pub fn zeros_like<T: Scalar>(params: &MotorParams<T>) -> Self {
        Self {
            d_neural: params
                .neural_friction
                .as_ref()
                .map(|h| vec![0.0; h.weights.len()]),
            ..Default::default()
        }
    }

    /// Same layout as [`MotorParams::to_vector`].
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = vec![self.d_armature, self.d_damping, self.d_frictionloss];
        if let Some(n) = &self.d_neural {
            out.extend_from_slice(n);
        }
        out
    }

    pub fn from_vector(values: &[f64], neural: bool) -> Self {
        Self {
            d_armature: values[0],
            d_damping: values[1],
            d_frictionloss: values[2],
            d_neural: neural.then(|| values[3..].to_vec()),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        self.d_armature += other.d_armature;
        self.d_damping += other.d_damping;
        self.d_frictionloss += other.d_frictionloss;
        if let (Some(a), Some(b)) = (self.d_neural.as_mut(), other.d_neural.as_ref()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|g| g.is_finite())
    }

    pub fn component_names(&self) -> Vec<String> {
        let mut names = vec!["armature".to_string(), "damping".into(), "frictionloss".into()];
        if let Some(n) = &self.d_neural {
            names.extend((0..n.len()).map(|i| format!("neural[{i}]")));
        }
        names
    }
}

#[inline]
fn residual<T: Scalar>(sim: JointState<T>, target: JointState<T>) -> (f64, f64) {
    (
        sim.q.as_f64() - target.q.as_f64(),
        sim.v.as_f64() - target.v.as_f64(),
    )
}

fn check_segment<T: Scalar>(segment: &Segment<T>) -> Result<()> {
    if segment.actions.is_empty() || segment.actions.len() != segment.targets.len() {
        return Err(Error::InvalidDataset(format!(
            "segment at {} has {} actions and {} targets",
            segment.start,
            segment.actions.len(),
            segment.targets.len()
        )));
    }
    Ok(())
}

fn segment_loss_unchecked<T: Scalar>(
    segment: &Segment<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
) -> Result<f64> {
    check_segment(segment)?;
    let states = rollout_states(segment.s0, &segment.actions, params, cfg, kind)?;
    Ok(states[1..]
        .iter()
        .zip(&segment.targets)
        .map(|(&s, &t)| {
            let (rq, rv) = residual(s, t);
            rq * rq + rv * rv
        })
        .sum())
}

/// Forward-only segment loss.
pub fn segment_loss<T: Scalar>(
    segment: &Segment<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
) -> Result<f64> {
    params.validate()?;
    cfg.validate()?;
    segment_loss_unchecked(segment, params, cfg, kind)
}

/// Segment loss and its exact gradient by backpropagation through the rollout.
pub fn segment_loss_grad<T: Scalar>(
    segment: &Segment<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
) -> Result<(f64, ParamGradient)> {
    params.validate()?;
    cfg.validate()?;
    let p64 = params.cast::<f64>();
    let c64 = cfg.cast::<f64>();
    segment_loss_grad_unchecked(segment, params, cfg, &p64, &c64, kind)
}

fn segment_loss_grad_unchecked<T: Scalar>(
    segment: &Segment<T>,
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    p64: &MotorParams<f64>,
    c64: &PlantConfig<f64>,
    kind: IntegratorKind,
) -> Result<(f64, ParamGradient)> {
    check_segment(segment)?;
    let states = rollout_states(segment.s0, &segment.actions, params, cfg, kind)?;
    let n = segment.actions.len();

    let residuals: Vec<(f64, f64)> = states[1..]
        .iter()
        .zip(&segment.targets)
        .map(|(&s, &t)| residual(s, t))
        .collect();
    let loss = residuals.iter().map(|(rq, rv)| rq * rq + rv * rv).sum();

    let mut grad = Accumulator::new(p64);
    let mut adj = (0.0, 0.0);
    for i in (0..n).rev() {
        let (rq, rv) = residuals[i];
        adj.0 += 2.0 * rq;
        adj.1 += 2.0 * rv;
        let s = states[i].cast::<f64>();
        let a = segment.actions[i].cast::<f64>();
        adj = step_vjp(s, a, p64, c64, kind, adj, &mut grad);
    }
    Ok((loss, grad.finish()))
}

struct Accumulator {
    armature: f64,
    damping: f64,
    frictionloss: f64,
    neural: Option<Vec<f64>>,
}

impl Accumulator {
    fn new(params: &MotorParams<f64>) -> Self {
        Self {
            armature: 0.0,
            damping: 0.0,
            frictionloss: 0.0,
            neural: params
                .neural_friction
                .as_ref()
                .map(|h| vec![0.0; h.weights.len()]),
        }
    }

    fn finish(self) -> ParamGradient {
        ParamGradient {
            d_armature: self.armature,
            d_damping: self.damping,
            d_frictionloss: self.frictionloss,
            d_neural: self.neural,
        }
    }
}

/// Vector-Jacobian product of the state derivative `F(x) = (v, accel(x))`:
/// returns `(∂F/∂x)ᵀ ȳ` and adds `(∂F/∂z)ᵀ ȳ` into `grad`.
#[inline]
fn rhs_vjp(
    x: JointState<f64>,
    action: Action<f64>,
    params: &MotorParams<f64>,
    cfg: &PlantConfig<f64>,
    ybar: (f64, f64),
    grad: &mut Accumulator,
) -> (f64, f64) {
    let abar = ybar.1;
    let nn = match (&params.neural_friction, grad.neural.as_mut()) {
        (Some(head), Some(out)) => {
            let inv_inertia = 1.0 / (cfg.load_inertia() + params.armature);
            head.accumulate_weight_grad(x.v, abar * inv_inertia, out)
        }
        _ => (0.0, 0.0),
    };
    let p = accel_partials_with_head(x, action, params, cfg, nn);
    grad.armature += abar * p.d_armature;
    grad.damping += abar * p.d_damping;
    grad.frictionloss += abar * p.d_frictionloss;
    (abar * p.d_q, ybar.0 + abar * p.d_v)
}

#[inline]
fn rhs(x: JointState<f64>, action: Action<f64>, params: &MotorParams<f64>, cfg: &PlantConfig<f64>) -> (f64, f64) {
    (x.v, crate::dynamics::accel_unchecked(x, action, params, cfg))
}

/// Adjoint of one integration step: maps the output adjoint to the input adjoint.
fn step_vjp(
    s: JointState<f64>,
    action: Action<f64>,
    params: &MotorParams<f64>,
    cfg: &PlantConfig<f64>,
    kind: IntegratorKind,
    lambda: (f64, f64),
    grad: &mut Accumulator,
) -> (f64, f64) {
    let h = cfg.delta;
    match kind {
        IntegratorKind::Euler => {
            let g = rhs_vjp(s, action, params, cfg, (h * lambda.0, h * lambda.1), grad);
            (lambda.0 + g.0, lambda.1 + g.1)
        }
        IntegratorKind::SemiImplicitEuler => {
            // v' = v + h a(x), q' = q + h v'
            let vbar = lambda.1 + h * lambda.0;
            let g = rhs_vjp(s, action, params, cfg, (0.0, h * vbar), grad);
            (lambda.0 + g.0, vbar + g.1)
        }
        IntegratorKind::Rk4 => {
            let half = 0.5 * h;
            let shift = |x: JointState<f64>, k: (f64, f64), c: f64| JointState::new(x.q + c * k.0, x.v + c * k.1);
            let x1 = s;
            let k1 = rhs(x1, action, params, cfg);
            let x2 = shift(s, k1, half);
            let k2 = rhs(x2, action, params, cfg);
            let x3 = shift(s, k2, half);
            let k3 = rhs(x3, action, params, cfg);
            let x4 = shift(s, k3, h);

            let scaled = |c: f64| (c * lambda.0, c * lambda.1);
            let mut k1bar = scaled(h / 6.0);
            let mut k2bar = scaled(h / 3.0);
            let mut k3bar = scaled(h / 3.0);
            let k4bar = scaled(h / 6.0);
            let mut xbar = lambda;

            let x4bar = rhs_vjp(x4, action, params, cfg, k4bar, grad);
            xbar = (xbar.0 + x4bar.0, xbar.1 + x4bar.1);
            k3bar = (k3bar.0 + h * x4bar.0, k3bar.1 + h * x4bar.1);

            let x3bar = rhs_vjp(x3, action, params, cfg, k3bar, grad);
            xbar = (xbar.0 + x3bar.0, xbar.1 + x3bar.1);
            k2bar = (k2bar.0 + half * x3bar.0, k2bar.1 + half * x3bar.1);

            let x2bar = rhs_vjp(x2, action, params, cfg, k2bar, grad);
            xbar = (xbar.0 + x2bar.0, xbar.1 + x2bar.1);
            k1bar = (k1bar.0 + half * x2bar.0, k1bar.1 + half * x2bar.1);

            let x1bar = rhs_vjp(x1, action, params, cfg, k1bar, grad);
            (xbar.0 + x1bar.0, xbar.1 + x1bar.1)
        }
    }
}

fn check_batch<S>(batch: &[S]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidDataset("empty segment batch".into()));
    }
    Ok(())
}

/// Sum of segment losses, in ascending segment order.
pub fn total_loss<T: Scalar>(
    batch: &[Segment<T>],
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
) -> Result<f64> {
    check_batch(batch)?;
    params.validate()?;
    cfg.validate()?;
    let losses: Vec<Result<f64>> = batch
        .par_iter()
        .map(|seg| segment_loss_unchecked(seg, params, cfg, kind))
        .collect();
    let mut total = 0.0;
    for (j, loss) in losses.into_iter().enumerate() {
        total += loss.map_err(|e| e.in_segment(j))?;
    }
    Ok(total)
}

/// Sum of segment losses and gradients. Segments are evaluated in parallel and
/// reduced in ascending index order, so the result does not depend on threading.
pub fn total_loss_grad<T: Scalar>(
    batch: &[Segment<T>],
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
) -> Result<(f64, ParamGradient)> {
    check_batch(batch)?;
    let refs: Vec<&Segment<T>> = batch.iter().collect();
    loss_grad_of(&refs, params, cfg, kind)
}

/// [`total_loss_grad`] over a borrowed selection of segments (e.g. a minibatch).
pub(crate) fn loss_grad_of<T: Scalar>(
    batch: &[&Segment<T>],
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
) -> Result<(f64, ParamGradient)> {
    check_batch(batch)?;
    params.validate()?;
    cfg.validate()?;
    let p64 = params.cast::<f64>();
    let c64 = cfg.cast::<f64>();
    let parts: Vec<Result<(f64, ParamGradient)>> = batch
        .par_iter()
        .map(|seg| segment_loss_grad_unchecked(seg, params, cfg, &p64, &c64, kind))
        .collect();
    let mut loss = 0.0;
    let mut grad = ParamGradient::zeros_like(params);
    for (j, part) in parts.into_iter().enumerate() {
        let (l, g) = part.map_err(|e| e.in_segment(j))?;
        loss += l;
        grad.add_assign(&g);
    }
    Ok((loss, grad))
}

/// Lower bounds of the three physical parameters; neural weights are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamFloors {
    pub armature: f64,
    pub damping: f64,
    pub frictionloss: f64,
}

impl Default for ParamFloors {
    fn default() -> Self {
        Self {
            armature: ARMATURE_FLOOR,
            damping: 0.0,
            frictionloss: 0.0,
        }
    }
}

impl ParamFloors {
    pub fn as_vector(&self, dimension: usize) -> Vec<f64> {
        let mut out = vec![f64::NEG_INFINITY; dimension];
        out[0] = self.armature;
        out[1] = self.damping;
        out[2] = self.frictionloss;
        out
    }
}

/// Central differences of an arbitrary loss over the flat parameter vector.
///
/// The step is `h_scale · max(1, |p|)`. A parameter closer than one step to its
/// floor uses the second-order one-sided stencil
/// `(−3L(p) + 4L(p+h) − L(p+2h)) / 2h` instead.
pub fn finite_diff_grad_with<F>(
    loss: F,
    params: &MotorParams<f64>,
    floors: &ParamFloors,
    h_scale: f64,
) -> Result<ParamGradient>
where
    F: Fn(&MotorParams<f64>) -> Result<f64>,
{
    if !(h_scale > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be > 0".into()));
    }
    let base = params.to_vector();
    let lower = floors.as_vector(base.len());
    let eval = |i: usize, offset: f64| -> Result<f64> {
        let mut x = base.clone();
        x[i] += offset;
        loss(&params.with_vector(&x))
    };
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let h = h_scale * base[i].abs().max(1.0);
        let d = if base[i] - h < lower[i] {
            (-3.0 * eval(i, 0.0)? + 4.0 * eval(i, h)? - eval(i, 2.0 * h)?) / (2.0 * h)
        } else {
            (eval(i, h)? - eval(i, -h)?) / (2.0 * h)
        };
        out.push(d);
    }
    Ok(ParamGradient::from_vector(&out, params.neural_friction.is_some()))
}

/// Finite-difference gradient of [`total_loss`]; the verification oracle.
pub fn finite_diff_grad<T: Scalar>(
    batch: &[Segment<T>],
    params: &MotorParams<T>,
    cfg: &PlantConfig<T>,
    kind: IntegratorKind,
    h_scale: f64,
) -> Result<ParamGradient> {
    finite_diff_grad_with(
        |p| total_loss(batch, &p.cast::<T>(), cfg, kind),
        &params.cast::<f64>(),
        &ParamFloors::default(),
        h_scale,
    )
}

/// Per-component comparison of analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    /// Relative error, or absolute error when `absolute` is set.
    pub error: f64,
    pub absolute: bool,
    pub pass: bool,
}

/// Tolerances for [`compare_gradients`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientTolerance {
    pub relative: f64,
    pub absolute: f64,
    /// Components whose analytic magnitude is below this are compared absolutely.
    pub small: f64,
}

impl Default for GradientTolerance {
    fn default() -> Self {
        Self {
            relative: 1e-4,
            absolute: 1e-8,
            small: 1e-10,
        }
    }
}

pub fn compare_gradients(
    analytic: &ParamGradient,
    numeric: &ParamGradient,
    tol: &GradientTolerance,
) -> Vec<ComponentCheck> {
    analytic
        .component_names()
        .into_iter()
        .zip(analytic.to_vector())
        .zip(numeric.to_vector())
        .map(|((name, a), n)| {
            let absolute = a.abs() < tol.small;
            let (error, pass) = if absolute {
                let e = (a - n).abs();
                (e, e < tol.absolute)
            } else {
                let e = (a - n).abs() / a.abs().max(n.abs());
                (e, e < tol.relative)
            };
            ComponentCheck {
                name,
                analytic: a,
                numeric: n,
                error,
                absolute,
                pass,
            }
        })
        .collect()
}
