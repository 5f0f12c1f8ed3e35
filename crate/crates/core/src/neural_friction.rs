//! Velocity-to-torque multilayer perceptron used as a learned friction model.
//!
//! The raw network is `f(x) = Σₖ w_outₖ · tanh(w_inₖ · x + b_inₖ) + b_out` with
//! `x = v / input_scale`. The exposed torque is the odd part
//! `(f(v) - f(-v)) / 2`, so the head never produces torque at rest.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_INPUT_SCALE: f64 = 1.0;
/// Half-width of the uniform weight initialisation.
pub const INIT_RANGE: f64 = 0.1;

/// One-hidden-layer tanh network, weights stored flat as
/// `[w_in (H), b_in (H), w_out (H), b_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralFrictionHead<T> {
    pub hidden: usize,
    /// Velocity normalisation (rad/s).
    pub input_scale: T,
    pub weights: Vec<T>,
}

impl<T: Scalar> NeuralFrictionHead<T> {
    pub fn num_weights(hidden: usize) -> usize {
        3 * hidden + 1
    }

    pub fn zeros(hidden: usize, input_scale: T) -> Self {
        Self {
            hidden,
            input_scale,
            weights: vec![T::zero(); Self::num_weights(hidden)],
        }
    }

    /// Weights drawn uniformly from `[-0.1, 0.1]`.
    pub fn seeded(hidden: usize, input_scale: T, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..Self::num_weights(hidden))
            .map(|_| T::lit(rng.random_range(-INIT_RANGE..=INIT_RANGE)))
            .collect();
        Self {
            hidden,
            input_scale,
            weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidParams("neural head needs at least one hidden unit".into()));
        }
        if self.weights.len() != Self::num_weights(self.hidden) {
            return Err(Error::InvalidParams(format!(
                "neural head with {} hidden units expects {} weights, got {}",
                self.hidden,
                Self::num_weights(self.hidden),
                self.weights.len()
            )));
        }
        if !(self.input_scale > T::zero()) || !self.input_scale.is_finite() {
            return Err(Error::InvalidParams("neural head input_scale must be > 0".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParams("neural head weights must be finite".into()));
        }
        Ok(())
    }

    fn w_in(&self) -> &[T] {
        &self.weights[..self.hidden]
    }

    fn b_in(&self) -> &[T] {
        &self.weights[self.hidden..2 * self.hidden]
    }

    fn w_out(&self) -> &[T] {
        &self.weights[2 * self.hidden..3 * self.hidden]
    }

    /// Raw (unsymmetrised) network output at velocity `v`.
    pub fn raw(&self, v: T) -> T {
        let x = v / self.input_scale;
        let hidden: T = self
            .w_in()
            .iter()
            .zip(self.b_in())
            .zip(self.w_out())
            .map(|((&w, &b), &o)| o * (w * x + b).tanh())
            .sum();
        hidden + self.weights[3 * self.hidden]
    }

    /// Friction torque (N·m); exactly odd in `v`.
    pub fn torque(&self, v: T) -> T {
        let x = v / self.input_scale;
        let half = T::lit(0.5);
        self.w_in()
            .iter()
            .zip(self.b_in())
            .zip(self.w_out())
            .map(|((&w, &b), &o)| {
                let wx = w * x;
                half * o * ((wx + b).tanh() - (b - wx).tanh())
            })
            .sum()
    }

    /// Torque and its derivative with respect to velocity.
    pub fn torque_and_dv(&self, v: T) -> (T, T) {
        let x = v / self.input_scale;
        let half = T::lit(0.5);
        let mut torque = T::zero();
        let mut slope = T::zero();
        for ((&w, &b), &o) in self.w_in().iter().zip(self.b_in()).zip(self.w_out()) {
            let wx = w * x;
            let tp = (b + wx).tanh();
            let tm = (b - wx).tanh();
            torque += half * o * (tp - tm);
            slope += half * o * w * ((T::one() - tp * tp) + (T::one() - tm * tm));
        }
        (torque, slope / self.input_scale)
    }

    /// Adds `scale · ∂torque/∂weights` at velocity `v` into `out` and returns
    /// the torque and its velocity slope, as [`Self::torque_and_dv`] would in `f64`.
    pub fn accumulate_weight_grad(&self, v: T, scale: f64, out: &mut [f64]) -> (f64, f64) {
        debug_assert_eq!(out.len(), self.weights.len());
        let h = self.hidden;
        let x = (v / self.input_scale).as_f64();
        let mut torque = 0.0;
        let mut slope = 0.0;
        for k in 0..h {
            let w = self.weights[k].as_f64();
            let b = self.weights[h + k].as_f64();
            let o = self.weights[2 * h + k].as_f64();
            let tp = (b + w * x).tanh();
            let tm = (b - w * x).tanh();
            let sp = 1.0 - tp * tp;
            let sm = 1.0 - tm * tm;
            out[k] += scale * 0.5 * o * x * (sp + sm);
            out[h + k] += scale * 0.5 * o * (sp - sm);
            out[2 * h + k] += scale * 0.5 * (tp - tm);
            torque += 0.5 * o * (tp - tm);
            slope += 0.5 * o * w * (sp + sm);
        }
        // the output bias cancels under odd symmetrisation
        (torque, slope / self.input_scale.as_f64())
    }

    pub fn cast<U: Scalar>(&self) -> NeuralFrictionHead<U> {
        NeuralFrictionHead {
            hidden: self.hidden,
            input_scale: U::lit(self.input_scale.as_f64()),
            weights: self.weights.iter().map(|w| U::lit(w.as_f64())).collect(),
        }
    }
}

/// Supervised fit of a head to `(velocity, torque)` samples.
///
/// Hidden gains are spread log-uniformly between the coarsest and finest
/// velocity scales present in the samples, the output layer is solved by
/// linear least squares, and the whole network is then refined with
/// Levenberg-Marquardt.
pub fn fit_to_samples(
    samples: &[(f64, f64)],
    hidden: usize,
    input_scale: f64,
    refine_iterations: usize,
) -> Result<NeuralFrictionHead<f64>> {
    if samples.len() < 2 || hidden == 0 {
        return Err(Error::InvalidConfig(
            "supervised fit needs at least two samples and one hidden unit".into(),
        ));
    }
    let v_max = samples.iter().map(|s| s.0.abs()).fold(0.0, f64::max);
    let mut speeds: Vec<f64> = samples.iter().map(|s| s.0.abs()).filter(|v| *v > 0.0).collect();
    speeds.sort_by(f64::total_cmp);
    let v_min = speeds.first().copied().unwrap_or(v_max);
    if !(v_max > 0.0) {
        return Err(Error::InvalidConfig("samples must span nonzero velocities".into()));
    }

    // gains in 1/(rad/s), from "linear over the whole range" to "saturates at the smallest sample"
    let g_lo = 0.1 / v_max;
    let g_hi = (2.0 / v_min).max(g_lo * 10.0);
    let mut head = NeuralFrictionHead::zeros(hidden, input_scale);
    for k in 0..hidden {
        let frac = if hidden == 1 { 0.5 } else { k as f64 / (hidden - 1) as f64 };
        head.weights[k] = (g_lo.ln() + frac * (g_hi.ln() - g_lo.ln())).exp() * input_scale;
    }

    let rows = samples.len();
    let features = DMatrix::from_fn(rows, hidden, |i, k| {
        (head.weights[k] * samples[i].0 / input_scale).tanh()
    });
    let targets = DVector::from_iterator(rows, samples.iter().map(|s| s.1));
    let out = ridge_solve(&features, &targets, 1e-12)?;
    for k in 0..hidden {
        head.weights[2 * hidden + k] = out[k];
    }

    levenberg_marquardt(&mut head, samples, refine_iterations);
    Ok(head)
}

fn ridge_solve(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let mut normal = a.transpose() * a;
    let scale = normal.diagonal().max().max(1e-300);
    for i in 0..normal.nrows() {
        normal[(i, i)] += ridge * scale;
    }
    let rhs = a.transpose() * b;
    normal
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::InvalidConfig("ill-conditioned supervised fit".into()))
}

fn sum_sq_error(head: &NeuralFrictionHead<f64>, samples: &[(f64, f64)]) -> f64 {
    samples.iter().map(|&(v, t)| (head.torque(v) - t).powi(2)).sum()
}

fn levenberg_marquardt(head: &mut NeuralFrictionHead<f64>, samples: &[(f64, f64)], iterations: usize) {
    let n = head.weights.len();
    let mut mu = 1e-3;
    let mut cost = sum_sq_error(head, samples);
    let mut row = vec![0.0; n];
    for _ in 0..iterations {
        let mut jtj = DMatrix::<f64>::zeros(n, n);
        let mut jtr = DVector::<f64>::zeros(n);
        for &(v, t) in samples {
            row.iter_mut().for_each(|r| *r = 0.0);
            let (torque, _) = head.accumulate_weight_grad(v, 1.0, &mut row);
            let r = torque - t;
            for i in 0..n {
                if row[i] == 0.0 {
                    continue;
                }
                jtr[i] += row[i] * r;
                for j in i..n {
                    jtj[(i, j)] += row[i] * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                jtj[(i, j)] = jtj[(j, i)];
            }
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[(i, i)] += mu * (jtj[(i, i)] + 1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&jtr);
            let mut trial = head.clone();
            for i in 0..n {
                trial.weights[i] -= step[i];
            }
            let trial_cost = sum_sq_error(&trial, samples);
            if trial_cost.is_finite() && trial_cost < cost {
                *head = trial;
                cost = trial_cost;
                mu = (mu * 0.3).max(1e-12);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
}
