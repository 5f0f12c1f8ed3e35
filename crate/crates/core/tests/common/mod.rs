#![allow(dead_code)]

use motor_sysid::dynamics::{Action, JointState, MotorParams, PlantConfig};
use motor_sysid::excitation::generate_dataset;
use motor_sysid::integrators::{rollout, step};
use motor_sysid::sysid::{FitConfig, LearningRate};
use motor_sysid::{segment, FourierSpec, IntegratorKind, SegmentBatch, SyntheticTwinSpec, TrajectoryDataset};

pub fn plant() -> PlantConfig<f64> {
    PlantConfig::default()
}

pub fn truth() -> MotorParams<f64> {
    MotorParams::new(0.01, 0.1, 0.05)
}

pub fn rel(value: f64, reference: f64) -> f64 {
    ((value - reference) / reference).abs()
}

/// Largest relative deviation of the three physical parameters.
pub fn max_rel(a: &MotorParams<f64>, b: &MotorParams<f64>) -> f64 {
    rel(a.armature, b.armature)
        .max(rel(a.damping, b.damping))
        .max(rel(a.frictionloss, b.frictionloss))
}

/// The 60 s default excitation applied to the twin with the hidden truth.
pub fn scenario_dataset(noisy: bool) -> TrajectoryDataset {
    let twin = if noisy {
        SyntheticTwinSpec {
            true_params: truth(),
            ..Default::default()
        }
    } else {
        SyntheticTwinSpec::noiseless(truth())
    };
    generate_dataset(&FourierSpec::default(), JointState::default(), &twin, &plant()).unwrap()
}

/// Adam settings used for the recovery scenarios: the default step of 1e-3
/// needs several thousand epochs to cross the damping/friction valley.
pub fn recovery_fit_config(kind: IntegratorKind) -> FitConfig {
    FitConfig {
        learning_rate: LearningRate::Scalar(1e-2),
        epochs: 1000,
        integrator: kind,
        ..Default::default()
    }
}

/// Largest per-step increase of mechanical energy with the PD controller off,
/// stepping RK4 at 1e-4 s for 1 s.
pub fn max_energy_increase(params: &MotorParams<f64>, s0: JointState<f64>) -> f64 {
    let cfg = PlantConfig {
        kp: 0.0,
        kd: 0.0,
        delta: 1e-4,
        ..plant()
    };
    let mut s = s0;
    let mut energy = cfg.mechanical_energy(s, params.armature);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        s = step(s, Action::new(0.0), params, &cfg, IntegratorKind::Rk4).unwrap();
        let next = cfg.mechanical_energy(s, params.armature);
        worst = worst.max(next - energy);
        energy = next;
    }
    worst
}

fn terminal_state(s0: JointState<f64>, q_des: f64, horizon: f64, delta: f64, kind: IntegratorKind) -> JointState<f64> {
    let cfg = PlantConfig { delta, ..plant() };
    let steps = (horizon / delta).round() as usize;
    let actions = vec![Action::new(q_des); steps];
    *rollout(s0, &actions, &truth(), &cfg, kind).unwrap().states.last().unwrap()
}

/// Observed order of explicit Euler over a 0.5 s horizon: log2 of the
/// terminal-error ratio between steps of 1e-3 and 5e-4, against RK4 at 1e-5.
pub fn euler_order(s0: JointState<f64>, q_des: f64) -> f64 {
    let horizon = 0.5;
    let reference = terminal_state(s0, q_des, horizon, 1e-5, IntegratorKind::Rk4);
    let error = |delta: f64| {
        let s = terminal_state(s0, q_des, horizon, delta, IntegratorKind::Euler);
        (s.q - reference.q).hypot(s.v - reference.v)
    };
    (error(1e-3) / error(5e-4)).log2()
}

pub fn order_scenarios() -> Vec<(JointState<f64>, f64)> {
    vec![
        (JointState::new(0.0, 0.0), 0.5),
        (JointState::new(0.3, -1.0), -0.2),
        (JointState::new(-1.0, 2.0), 1.0),
        (JointState::new(1.5, 0.0), 0.0),
    ]
}

/// Largest state difference between Euler and RK4 rollouts of every 25th segment.
pub fn euler_rk4_segment_gap(batch: &SegmentBatch<f64>) -> f64 {
    let cfg = plant();
    batch
        .segments
        .iter()
        .step_by(25)
        .map(|seg| {
            let e = rollout(seg.s0, &seg.actions, &truth(), &cfg, IntegratorKind::Euler).unwrap();
            let r = rollout(seg.s0, &seg.actions, &truth(), &cfg, IntegratorKind::Rk4).unwrap();
            e.states
                .iter()
                .zip(&r.states)
                .map(|(a, b)| (a.q - b.q).abs().max((a.v - b.v).abs()))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn scenario_segments(noisy: bool) -> SegmentBatch<f64> {
    segment(&scenario_dataset(noisy), 4).unwrap()
}
