//! Cross-module behavior of the controller, plant and optimizer through the
//! public API only.

use gaitkit_core::bayes_opt::{evaluate_cost, optimize, CostConfig, Fidelity, GainObjective, Objective, OptBudget, OptimizerConfig};
use gaitkit_core::corrective::FeedbackGains;
use gaitkit_core::orientation::{fused_to_quat, unit_quat_to_fused, FusedAngles};
use gaitkit_core::pose_space::{abstract_to_joint, joint_to_abstract};
use gaitkit_core::surrogate_sim::{
    make_real_plant, run_scenario, run_sequence, standard_test_sequence, ControllerConfig, Disturbance, PlantParams, PushDirection, RealityGap, Scenario,
    Segment,
};

fn pushed(gains: FeedbackGains, impulse: f64, seed: u64) -> Scenario {
    Scenario {
        controller: ControllerConfig { gains, ..Default::default() },
        plant: PlantParams { seed, ..Default::default() },
        disturbances: vec![Disturbance {
            time: 1.0,
            impulse,
            direction: PushDirection::Back,
        }],
        ..Default::default()
    }
}

#[test]
fn feedback_recovers_pushes_that_topple_the_open_loop() {
    let seq = vec![Segment::new(0.3, 0.0, 0.0, 4.0)];
    for seed in 0..5 {
        let closed = run_scenario(&pushed(FeedbackGains::tuned_default(), 26.0, seed), &seq).unwrap();
        let open = run_scenario(&pushed(FeedbackGains::ZERO, 26.0, seed), &seq).unwrap();
        assert!(open.fallen && !closed.fallen, "seed {seed}");
    }
}

#[test]
fn every_controller_pose_is_a_valid_joint_pose() {
    let scenario = pushed(FeedbackGains::tuned_default(), 9.51, 3);
    let mut controller = gaitkit_core::surrogate_sim::GaitController::new(scenario.controller).unwrap();
    let trace = run_scenario(&scenario, &standard_test_sequence()).unwrap();
    for s in trace.samples.iter().step_by(7) {
        let measured = unit_quat_to_fused(&s.state.attitude());
        let out = controller.step(&Default::default(), &measured, trace.dt).unwrap();
        let back = abstract_to_joint(&joint_to_abstract(&out.joints)).unwrap();
        assert!((back.left_leg.knee_pitch - out.joints.left_leg.knee_pitch).abs() < 1e-9);
        assert!((back.right_leg.hip_pitch - out.joints.right_leg.hip_pitch).abs() < 1e-9);
    }
}

#[test]
fn plant_attitude_matches_fused_tilt() {
    let f = FusedAngles::tilt(0.2, -0.1);
    let q = fused_to_quat(&f).unwrap();
    let back = unit_quat_to_fused(&q);
    assert!((back.pitch - 0.2).abs() < 1e-12 && (back.roll + 0.1).abs() < 1e-12);
}

#[test]
fn objective_matches_a_direct_run() {
    let sim = PlantParams::default();
    let gap = RealityGap::standard();
    let obj = GainObjective::sagittal_arm(sim, &gap);
    let x = [2.0, 0.3];
    let mut gains = FeedbackGains::tuned_default();
    gains.arm_angle_y.p = x[0];
    gains.arm_angle_y.d = x[1];
    for (fidelity, plant) in [(Fidelity::Sim, sim), (Fidelity::Real, make_real_plant(&sim, &gap))] {
        let direct = run_sequence(&gains, &Default::default(), &standard_test_sequence(), &PlantParams { seed: plant.seed.wrapping_add(5), ..plant }).unwrap();
        let expected = evaluate_cost(&direct, &CostConfig::default(), &x).unwrap();
        assert_eq!(obj.evaluate(&x, fidelity, 5).unwrap(), expected);
    }
}

#[test]
fn short_optimization_is_reproducible_and_within_budget() {
    let obj = GainObjective::sagittal_arm(PlantParams::default(), &RealityGap::standard());
    let cfg = OptimizerConfig {
        budget: OptBudget {
            max_real: 4,
            max_total: 16,
            ..Default::default()
        },
        ..Default::default()
    };
    let bounds = GainObjective::sagittal_arm_bounds();
    let a = optimize(&obj, &cfg, &bounds, &obj.initial_x(), 12).unwrap();
    let b = optimize(&obj, &cfg, &bounds, &obj.initial_x(), 12).unwrap();
    assert_eq!(a, b);
    assert!(a.real_count() <= 4 && a.history.len() <= 16);
    assert_eq!(a.best.point.fidelity, Fidelity::Real);
    assert!(a.history.iter().all(|r| bounds.contains(&r.point.x)));
}
