//! Parameter identification by projected first-order descent on the segmented
//! loss, and open-loop evaluation on held-out data.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Segment, SegmentBatch, TrajectoryDataset};
use crate::dynamics::{MotorParams, PlantConfig};
use crate::error::{Error, Result};
use crate::gradients::{loss_grad_of, total_loss, ParamFloors};
use crate::integrators::{step_checked, IntegratorKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Step size, shared or per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Scalar(f64),
    PerParameter {
        armature: f64,
        damping: f64,
        frictionloss: f64,
        #[serde(default)]
        neural: f64,
    },
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate::Scalar(1e-3)
    }
}

impl LearningRate {
    fn as_vector(&self, dimension: usize) -> Vec<f64> {
        match *self {
            LearningRate::Scalar(lr) => vec![lr; dimension],
            LearningRate::PerParameter {
                armature,
                damping,
                frictionloss,
                neural,
            } => {
                let mut out = vec![neural; dimension];
                out[..3].copy_from_slice(&[armature, damping, frictionloss]);
                out
            }
        }
    }

    fn is_valid(&self, neural: bool) -> bool {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        match *self {
            LearningRate::Scalar(lr) => ok(lr),
            LearningRate::PerParameter {
                armature,
                damping,
                frictionloss,
                neural: n,
            } => ok(armature) && ok(damping) && ok(frictionloss) && (!neural || ok(n)),
        }
    }
}

/// Which parameter groups the optimizer may move. Frozen groups keep their
/// initial value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub armature: bool,
    pub damping: bool,
    pub frictionloss: bool,
    pub neural: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Self {
            armature: true,
            damping: true,
            frictionloss: true,
            neural: true,
        }
    }
}

impl Trainable {
    fn as_mask(&self, dimension: usize) -> Vec<bool> {
        let mut out = vec![self.neural; dimension];
        out[..3].copy_from_slice(&[self.armature, self.damping, self.frictionloss]);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub initial_params: MotorParams<f64>,
    pub optimizer: Optimizer,
    pub learning_rate: LearningRate,
    pub epochs: usize,
    /// Segments per update; 0 means full batch.
    pub minibatch_size: usize,
    pub integrator: IntegratorKind,
    /// Minibatch shuffling seed.
    pub seed: u64,
    pub param_floors: ParamFloors,
    #[serde(default)]
    pub trainable: Trainable,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            initial_params: MotorParams::baseline(),
            optimizer: Optimizer::default(),
            learning_rate: LearningRate::default(),
            epochs: 500,
            minibatch_size: 0,
            integrator: IntegratorKind::Euler,
            seed: 0,
            param_floors: ParamFloors::default(),
            trainable: Trainable::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !self
            .learning_rate
            .is_valid(self.initial_params.neural_friction.is_some())
        {
            return Err(Error::InvalidConfig("learning rates must be finite and > 0".into()));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::InvalidConfig(
                    "Adam needs beta1, beta2 in [0, 1) and epsilon > 0".into(),
                ));
            }
        }
        let floors = &self.param_floors;
        if !(floors.armature >= crate::dynamics::ARMATURE_FLOOR)
            || !(floors.damping >= 0.0)
            || !(floors.frictionloss >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "parameter floors must keep parameters physically valid".into(),
            ));
        }
        self.initial_params.validate()
    }
}

/// Full-batch training loss and parameters at the start of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub armature: f64,
    pub damping: f64,
    pub frictionloss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `epochs + 1` entries; the last one is the state after the final update.
    pub curve: Vec<EpochRecord>,
    pub initial_params: MotorParams<f64>,
    pub initial_loss: f64,
    pub best_params: MotorParams<f64>,
    pub best_loss: f64,
    pub best_epoch: usize,
    /// `1 - best_loss / initial_loss`.
    pub loss_reduction: f64,
    pub segments: usize,
    pub integrator: IntegratorKind,
    /// Wall-clock seconds; excluded from the serialised report so reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl FitReport {
    pub fn seconds_per_epoch(&self) -> f64 {
        self.wall_time_s / (self.curve.len().saturating_sub(1)).max(1) as f64
    }

    /// Convergence table: `epoch, loss, armature, damping, frictionloss`.
    pub fn write_curve_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["epoch", "loss", "armature", "damping", "frictionloss"])?;
        for rec in &self.curve {
            csv.write_record([
                rec.epoch.to_string(),
                format!("{:.16e}", rec.loss),
                format!("{:.16e}", rec.armature),
                format!("{:.16e}", rec.damping),
                format!("{:.16e}", rec.frictionloss),
            ])?;
        }
        csv.flush().map_err(|e| Error::io("<fit curve>", e))?;
        Ok(())
    }
}

struct AdamState {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

enum OptimizerState {
    GradientDescent,
    Adam(AdamState),
}

impl OptimizerState {
    fn new(opt: Optimizer, dimension: usize) -> Self {
        match opt {
            Optimizer::GradientDescent => OptimizerState::GradientDescent,
            Optimizer::Adam { beta1, beta2, epsilon } => OptimizerState::Adam(AdamState {
                beta1,
                beta2,
                epsilon,
                m: vec![0.0; dimension],
                v: vec![0.0; dimension],
                t: 0,
            }),
        }
    }

    fn update(&mut self, x: &mut [f64], grad: &[f64], lr: &[f64], mask: &[bool], floors: &[f64]) {
        match self {
            OptimizerState::GradientDescent => {
                for i in 0..x.len() {
                    if mask[i] {
                        x[i] -= lr[i] * grad[i];
                    }
                }
            }
            OptimizerState::Adam(s) => {
                s.t += 1;
                let c1 = 1.0 - s.beta1.powi(s.t);
                let c2 = 1.0 - s.beta2.powi(s.t);
                for i in 0..x.len() {
                    if !mask[i] {
                        continue;
                    }
                    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grad[i];
                    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
                    let m_hat = s.m[i] / c1;
                    let v_hat = s.v[i] / c2;
                    x[i] -= lr[i] * m_hat / (v_hat.sqrt() + s.epsilon);
                }
            }
        }
        for (xi, &lo) in x.iter_mut().zip(floors) {
            *xi = xi.max(lo);
        }
    }
}

fn diverged(epoch: usize, params: &MotorParams<f64>, reason: impl ToString) -> Error {
    Error::FitDiverged {
        epoch,
        armature: params.armature,
        damping: params.damping,
        frictionloss: params.frictionloss,
        reason: reason.to_string(),
    }
}

/// Minimises the summed segment loss over `train`.
///
/// Each epoch records the full-batch loss at the current parameters, then
/// applies one update (full batch) or one pass of shuffled minibatches. The
/// parameters with the lowest recorded loss are returned.
pub fn fit<T: Scalar>(
    train: &SegmentBatch<T>,
    cfg: &PlantConfig<T>,
    fit_cfg: &FitConfig,
) -> Result<FitReport> {
    fit_cfg.validate()?;
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidDataset("no training segments".into()));
    }
    let started = Instant::now();
    let kind = fit_cfg.integrator;
    let template = fit_cfg.initial_params.clone();
    let dimension = template.dimension();
    let lr = fit_cfg.learning_rate.as_vector(dimension);
    let mask = fit_cfg.trainable.as_mask(dimension);
    let floors = fit_cfg.param_floors.as_vector(dimension);
    let mut state = OptimizerState::new(fit_cfg.optimizer, dimension);
    let mut rng = ChaCha8Rng::seed_from_u64(fit_cfg.seed);

    let all: Vec<&Segment<T>> = train.segments.iter().collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut x = template.to_vector();
    let mut curve = Vec::with_capacity(fit_cfg.epochs + 1);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 0..=fit_cfg.epochs {
        let current = template.with_vector(&x);
        let as_t = current.cast::<T>();
        let last = epoch == fit_cfg.epochs;
        let full_batch_step = fit_cfg.minibatch_size == 0 && !last;

        let (loss, grad) = if full_batch_step {
            let (l, g) = loss_grad_of(&all, &as_t, cfg, kind).map_err(|e| diverged(epoch, &current, e))?;
            (l, Some(g))
        } else {
            let l = total_loss(&train.segments, &as_t, cfg, kind).map_err(|e| diverged(epoch, &current, e))?;
            (l, None)
        };
        if !loss.is_finite() {
            return Err(diverged(epoch, &current, "non-finite loss"));
        }
        curve.push(EpochRecord {
            epoch,
            loss,
            armature: current.armature,
            damping: current.damping,
            frictionloss: current.frictionloss,
        });
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, epoch, x.clone()));
        }
        if last {
            break;
        }

        match grad {
            Some(g) => {
                let g = g.to_vector();
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(diverged(epoch, &current, "non-finite gradient"));
                }
                state.update(&mut x, &g, &lr, &mask, &floors);
            }
            None => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(fit_cfg.minibatch_size) {
                    let batch: Vec<&Segment<T>> = chunk.iter().map(|&i| all[i]).collect();
                    let params = template.with_vector(&x);
                    let (_, g) = loss_grad_of(&batch, &params.cast::<T>(), cfg, kind)
                        .map_err(|e| diverged(epoch, &params, e))?;
                    let g = g.to_vector();
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(diverged(epoch, &params, "non-finite gradient"));
                    }
                    state.update(&mut x, &g, &lr, &mask, &floors);
                }
            }
        }
    }

    let (best_loss, best_epoch, best_x) = best.expect("at least one epoch recorded");
    let initial_loss = curve[0].loss;
    Ok(FitReport {
        initial_params: template.clone(),
        initial_loss,
        best_params: template.with_vector(&best_x),
        best_loss,
        best_epoch,
        loss_reduction: if initial_loss > 0.0 {
            1.0 - best_loss / initial_loss
        } else {
            0.0
        },
        segments: train.len(),
        integrator: kind,
        curve,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Open-loop behaviour of one parameter set on a held-out trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub params: MotorParams<f64>,
    /// Mean squared angle error over the predicted steps; `None` if the rollout diverged.
    pub q_mse: Option<f64>,
    pub v_mse: Option<f64>,
    /// Step index at which the rollout became non-finite.
    pub diverged_at: Option<usize>,
    /// `|q_sim - q_real|` per step, starting at the shared initial state.
    #[serde(skip)]
    pub abs_q_error: Vec<f64>,
    #[serde(skip)]
    pub abs_v_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub integrator: IntegratorKind,
    pub optimized: ModelEval,
    pub baseline: ModelEval,
    /// Baseline q-MSE divided by optimized q-MSE.
    pub q_mse_ratio: Option<f64>,
    #[serde(skip)]
    pub timestamps: Vec<f64>,
}

impl EvalReport {
    /// Per-step absolute error table: `t, q_err_optimized, q_err_baseline, v_err_optimized, v_err_baseline`.
    pub fn write_error_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record([
            "t",
            "abs_q_error_optimized",
            "abs_q_error_baseline",
            "abs_v_error_optimized",
            "abs_v_error_baseline",
        ])?;
        let cell = |series: &[f64], i: usize| series.get(i).map(|x| format!("{x:.16e}")).unwrap_or_default();
        for (i, t) in self.timestamps.iter().enumerate() {
            csv.write_record([
                format!("{t:.16e}"),
                cell(&self.optimized.abs_q_error, i),
                cell(&self.baseline.abs_q_error, i),
                cell(&self.optimized.abs_v_error, i),
                cell(&self.baseline.abs_v_error, i),
            ])?;
        }
        csv.flush().map_err(|e| Error::io("<eval csv>", e))?;
        Ok(())
    }
}

fn open_loop(
    test: &TrajectoryDataset,
    params: &MotorParams<f64>,
    cfg: &PlantConfig<f64>,
    kind: IntegratorKind,
) -> ModelEval {
    let n = test.len();
    let mut abs_q = Vec::with_capacity(n);
    let mut abs_v = Vec::with_capacity(n);
    let mut s = test.states[0];
    abs_q.push(0.0);
    abs_v.push(0.0);
    let mut diverged_at = None;
    for i in 0..n - 1 {
        match step_checked(s, test.actions[i], params, cfg, kind, cfg.delta, i) {
            Ok(next) => s = next,
            Err(_) => {
                diverged_at = Some(i);
                break;
            }
        }
        abs_q.push((s.q - test.states[i + 1].q).abs());
        abs_v.push((s.v - test.states[i + 1].v).abs());
    }
    let mse = |series: &[f64]| {
        let predicted = &series[1..];
        predicted.iter().map(|e| e * e).sum::<f64>() / predicted.len().max(1) as f64
    };
    let (q_mse, v_mse) = match diverged_at {
        None => (Some(mse(&abs_q)), Some(mse(&abs_v))),
        Some(_) => (None, None),
    };
    ModelEval {
        params: params.clone(),
        q_mse,
        v_mse,
        diverged_at,
        abs_q_error: abs_q,
        abs_v_error: abs_v,
    }
}

/// Rolls both parameter sets open-loop over the whole test trajectory from its
/// first recorded state, under the recorded actions.
pub fn evaluate(
    test: &TrajectoryDataset,
    params: &MotorParams<f64>,
    baseline: &MotorParams<f64>,
    cfg: &PlantConfig<f64>,
    kind: IntegratorKind,
) -> Result<EvalReport> {
    test.validate()?;
    cfg.validate()?;
    params.validate()?;
    baseline.validate()?;
    if test.len() < 2 {
        return Err(Error::InvalidDataset("evaluation needs at least two samples".into()));
    }
    match test.uniform_delta() {
        Some(d) if (d - cfg.delta).abs() <= 1e-6 * cfg.delta => {}
        other => {
            return Err(Error::InvalidDataset(format!(
                "test data grid {other:?} does not match the plant step {}",
                cfg.delta
            )))
        }
    }
    let optimized = open_loop(test, params, cfg, kind);
    let base = open_loop(test, baseline, cfg, kind);
    let q_mse_ratio = match (base.q_mse, optimized.q_mse) {
        (Some(b), Some(o)) if o > 0.0 => Some(b / o),
        _ => None,
    };
    Ok(EvalReport {
        samples: test.len(),
        integrator: kind,
        optimized,
        baseline: base,
        q_mse_ratio,
        timestamps: test.timestamps.clone(),
    })
}
