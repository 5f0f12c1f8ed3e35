mod common;

use common::*;
use motor_sysid::config::RunConfig;
use motor_sysid::dynamics::{Action, JointState, MotorParams};
use motor_sysid::gradients::{compare_gradients, GradientTolerance};
use motor_sysid::integrators::rollout;
use motor_sysid::run::gradcheck;
use motor_sysid::{finite_diff_grad, segment_loss_grad, total_loss_grad, IntegratorKind, Segment};
use proptest::prelude::*;

const KINDS: [IntegratorKind; 3] = [IntegratorKind::Euler, IntegratorKind::SemiImplicitEuler, IntegratorKind::Rk4];

#[test]
fn oracle_agreement_on_random_cases() {
    for kind in KINDS {
        for neural in [false, true] {
            let cfg = RunConfig::default()
                .with_overrides(&[
                    format!("fit.integrator={}", serde_json::to_string(&kind).unwrap()),
                    format!("gradcheck.neural={neural}"),
                ])
                .unwrap();
            let report = gradcheck(&cfg, None).unwrap();
            assert_eq!(report.cases.len(), 20);
            assert!(report.passed, "{kind:?} neural={neural}: {} failures", report.failures);
        }
    }
}

#[test]
fn zero_residual_cases_report_zero_gradients() {
    let cfg = RunConfig::default()
        .with_overrides(&["gradcheck.zero_residual=true", "gradcheck.neural=true"])
        .unwrap();
    let report = gradcheck(&cfg, None).unwrap();
    assert!(report.passed);
    assert_eq!(report.max_abs_gradient, 0.0);
}

#[test]
fn corrupted_adjoint_is_caught() {
    let report = gradcheck(&RunConfig::default(), Some(1e-3)).unwrap();
    assert!(!report.passed);
}

#[test]
fn batch_gradient_is_the_ordered_sum() {
    let batch = scenario_segments(true);
    let some = &batch.segments[100..140];
    let params = MotorParams::new(0.02, 0.05, 0.03);
    let (loss, grad) = total_loss_grad(some, &params, &plant(), IntegratorKind::Euler).unwrap();
    let mut sum_loss = 0.0;
    let mut sum = vec![0.0; 3];
    for seg in some {
        let (l, g) = segment_loss_grad(seg, &params, &plant(), IntegratorKind::Euler).unwrap();
        sum_loss += l;
        for (s, x) in sum.iter_mut().zip(g.to_vector()) {
            *s += x;
        }
    }
    assert_eq!(loss, sum_loss);
    assert_eq!(grad.to_vector(), sum);

    let fd = finite_diff_grad(some, &params, &plant(), IntegratorKind::Euler, 1e-6).unwrap();
    for c in compare_gradients(&grad, &fd, &GradientTolerance::default()) {
        assert!(c.pass, "{c:?}");
    }
}

#[test]
fn duplicated_segment_doubles_the_gradient() {
    let batch = scenario_segments(true);
    let seg = batch.segments[321].clone();
    let params = MotorParams::new(0.02, 0.05, 0.03);
    let (l1, g1) = total_loss_grad(std::slice::from_ref(&seg), &params, &plant(), IntegratorKind::Rk4).unwrap();
    let (l2, g2) = total_loss_grad(&[seg.clone(), seg], &params, &plant(), IntegratorKind::Rk4).unwrap();
    assert_eq!(l2, 2.0 * l1);
    let doubled: Vec<f64> = g1.to_vector().iter().map(|g| 2.0 * g).collect();
    assert_eq!(g2.to_vector(), doubled);
}

#[test]
fn zero_at_interpolating_optimum() {
    let cfg = plant();
    let params = truth();
    for kind in KINDS {
        let actions: Vec<_> = [0.1, 0.2, 0.3, 0.4].into_iter().map(Action::new).collect();
        let s0 = JointState::new(0.05, 1.0);
        let states = rollout(s0, &actions, &params, &cfg, kind).unwrap().states;
        let seg = Segment {
            s0,
            actions,
            targets: states[1..].to_vec(),
            start: 0,
        };
        let (loss, grad) = segment_loss_grad(&seg, &params, &cfg, kind).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.to_vector().iter().all(|g| *g == 0.0));
        let fd = finite_diff_grad(std::slice::from_ref(&seg), &params, &cfg, kind, 1e-6).unwrap();
        assert!(fd.to_vector().iter().all(|g| g.abs() < 1e-8), "{fd:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn segments_from_the_dataset_match_finite_differences(
        index in 0usize..12_000,
        armature in 0.002..0.05f64,
        damping in 0.01..0.3f64,
        frictionloss in 0.01..0.2f64,
    ) {
        thread_local! {
            static BATCH: motor_sysid::SegmentBatch<f64> = scenario_segments(true);
        }
        let seg = BATCH.with(|b| b.segments[index % b.len()].clone());
        let params = MotorParams::new(armature, damping, frictionloss);
        for kind in KINDS {
            let (_, g) = segment_loss_grad(&seg, &params, &plant(), kind).unwrap();
            let fd = finite_diff_grad(std::slice::from_ref(&seg), &params, &plant(), kind, 1e-6).unwrap();
            for c in compare_gradients(&g, &fd, &GradientTolerance::default()) {
                prop_assert!(c.pass, "{:?} {:?}", kind, c);
            }
        }
    }
}
