mod common;

use common::*;
use motor_sysid::dynamics::{Action, JointState, MotorParams, PlantConfig};
use motor_sysid::excitation::{FourierMode, FourierSignal};
use motor_sysid::integrators::{rollout, step};
use motor_sysid::{accel, friction_torque, IntegratorKind, NeuralFrictionHead};
use proptest::prelude::*;

fn params_strategy() -> impl Strategy<Value = MotorParams<f64>> {
    (1e-8..0.5f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b, f)| MotorParams::new(a, b, f))
}

proptest! {
    #[test]
    fn equilibrium_is_exact(params in params_strategy()) {
        let a = accel(JointState::new(0.0, 0.0), Action::new(0.0), &params, &plant()).unwrap();
        prop_assert_eq!(a, 0.0);
    }

    #[test]
    fn friction_is_odd(params in params_strategy(), v in -50.0..50.0f64) {
        let cfg = plant();
        prop_assert_eq!(friction_torque(-v, &params, &cfg), -friction_torque(v, &params, &cfg));
    }

    #[test]
    fn friction_never_injects_power(params in params_strategy(), v in -50.0..50.0f64) {
        prop_assert!(v * friction_torque(v, &params, &plant()) <= 0.0);
    }

    #[test]
    fn coulomb_term_stays_below_frictionloss(f in 1e-3..1.0f64, v in -50.0..50.0f64) {
        let params = MotorParams::new(0.01, 0.0, f);
        prop_assert!(friction_torque(v, &params, &plant()).abs() <= f);
    }

    #[test]
    fn inertia_reduces_acceleration(
        base in 1e-6..0.2f64,
        extra in 1e-4..0.2f64,
        q in -3.0..3.0f64,
        v in -4.0..4.0f64,
        q_des in -3.0..3.0f64,
    ) {
        let cfg = plant();
        let s = JointState::new(q, v);
        let a = Action::new(q_des);
        let light = accel(s, a, &MotorParams::new(base, 0.1, 0.05), &cfg).unwrap();
        let heavy = accel(s, a, &MotorParams::new(base + extra, 0.1, 0.05), &cfg).unwrap();
        prop_assume!(light != 0.0);
        prop_assert!(heavy.abs() < light.abs());
    }

    #[test]
    fn neural_head_is_odd(seed in any::<u64>(), v in -10.0..10.0f64, scale in 0.1..5.0f64) {
        let mut head = NeuralFrictionHead::seeded(16, scale, seed);
        head.weights.iter_mut().for_each(|w| *w *= 30.0);
        prop_assert_eq!(head.torque(-v), -head.torque(v));
        prop_assert_eq!(head.torque(0.0), 0.0);
    }

    #[test]
    fn states_stay_finite(
        params in params_strategy(),
        q in -3.0..3.0f64,
        v in -4.0..4.0f64,
        q_des in -3.0..3.0f64,
    ) {
        let actions = vec![Action::new(q_des); 4];
        for kind in [IntegratorKind::Euler, IntegratorKind::SemiImplicitEuler, IntegratorKind::Rk4] {
            let r = rollout(JointState::new(q, v), &actions, &params, &plant(), kind).unwrap();
            prop_assert!(r.states.iter().all(|s| s.is_finite()));
        }
    }

    #[test]
    fn rollouts_are_deterministic(q in -3.0..3.0f64, v in -4.0..4.0f64, q_des in -3.0..3.0f64) {
        let actions: Vec<_> = (0..8).map(|i| Action::new(q_des + 0.01 * i as f64)).collect();
        let a = rollout(JointState::new(q, v), &actions, &truth(), &plant(), IntegratorKind::Rk4).unwrap();
        let b = rollout(JointState::new(q, v), &actions, &truth(), &plant(), IntegratorKind::Rk4).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn clipped_velocity_stays_in_bounds(amplitude in 0.0..20.0f64, f in 0.1..3.0f64, t in 0.0..10.0f64) {
        let signal = FourierSignal {
            modes: vec![FourierMode { amplitude, frequency: f, phase: 0.3 }],
            offset: 0.0,
            v_max: 2.0,
            duration: 10.0,
        };
        prop_assert!(signal.velocity(t).abs() <= 2.0);
    }
}

#[test]
fn energy_is_non_increasing_without_control() {
    for (params, s0) in [
        (truth(), JointState::new(1.0, 2.0)),
        (MotorParams::new(0.05, 0.01, 0.0), JointState::new(2.5, -1.0)),
        (MotorParams::new(1e-3, 0.3, 0.2), JointState::new(-0.5, 4.0)),
    ] {
        let worst = max_energy_increase(&params, s0);
        assert!(worst <= 1e-9, "energy grew by {worst} J in one step");
    }
}

#[test]
fn euler_is_first_order() {
    for (s0, q_des) in order_scenarios() {
        let order = euler_order(s0, q_des);
        assert!((0.8..=1.2).contains(&order), "order {order} from {s0:?}");
    }
}

#[test]
fn euler_and_rk4_agree_over_a_segment() {
    let gap = euler_rk4_segment_gap(&scenario_segments(false));
    assert!(gap < 1e-3, "max state gap {gap}");
}

#[test]
fn single_precision_tracks_double() {
    let cfg = plant();
    let actions: Vec<_> = (0..100).map(|i| Action::new((i as f64 * 0.01).sin())).collect();
    let s0 = JointState::new(0.2, 0.0);
    let r64 = rollout(s0, &actions, &truth(), &cfg, IntegratorKind::Euler).unwrap();
    let a32: Vec<Action<f32>> = actions.iter().map(|a| a.cast()).collect();
    let r32 = rollout(s0.cast::<f32>(), &a32, &truth().cast::<f32>(), &cfg.cast::<f32>(), IntegratorKind::Euler).unwrap();
    for (a, b) in r64.states.iter().zip(&r32.states) {
        assert!((a.q - b.q as f64).abs() < 1e-4);
        assert!((a.v - b.v as f64).abs() < 1e-3);
    }
}

#[test]
fn torque_limit_saturates() {
    let cfg = PlantConfig {
        torque_limit: Some(1.0),
        ..plant()
    };
    let s = JointState::new(0.0, 0.0);
    let limited = step(s, Action::new(10.0), &truth(), &cfg, IntegratorKind::Euler).unwrap();
    let inertia = cfg.load_inertia() + truth().armature;
    assert!((limited.v - 1e-3 / inertia).abs() < 1e-15);
}
