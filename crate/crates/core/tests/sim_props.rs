mod common;

use mea_core::group::{RotationAngle, Vec3};
use mea_core::sim::{ActionSpace, DiscreteAction, EnvConfig, KinSim, Pose, SimState};
use mea_core::trajectory::Action;
use mea_core::Error;
use proptest::prelude::*;

fn sim() -> KinSim {
    KinSim::new(EnvConfig::default()).unwrap()
}

fn action() -> impl Strategy<Value = Action> {
    (
        -1.0..=1.0f64,
        -1.0..=1.0f64,
        -1.0..=1.0f64,
        -1.0..=1.0f64,
        prop_oneof![Just(1.0), Just(-1.0), -1.0..=1.0f64],
    )
        .prop_map(|(x, y, z, t, j)| Action::new(Vec3::new(x, y, z), t, j))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn free_regime_step_is_prediction(seed in any::<u64>(), a in action()) {
        let sim = sim();
        let (s, _) = sim.reset(seed);
        prop_assume!(sim.in_free_regime(&s));
        match sim.predict_next_state(&s, &a) {
            Ok(pred) => {
                let stepped = sim.step(&s, &a).unwrap().state;
                // Closing the jaw high above the objects grasps nothing.
                prop_assert_eq!(stepped, pred);
            }
            Err(e) => prop_assert!(matches!(e, Error::AssumptionViolated(_)), "{e}"),
        }
    }

    #[test]
    fn step_is_deterministic(seed in any::<u64>(), acts in proptest::collection::vec(action(), 1..30)) {
        let sim = sim();
        let (s0, _) = sim.reset(seed);
        let run = || {
            let mut s = s0.clone();
            let mut out = Vec::new();
            for a in &acts {
                if sim.is_terminal(&s) { break; }
                let o = sim.step(&s, a).unwrap();
                s = o.state.clone();
                out.push((o.state, o.observation, o.reward, o.terminal));
            }
            out
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x.0 == y.0 && x.1 == y.1 && x.2.to_bits() == y.2.to_bits() && x.3 == y.3);
        }
    }

    #[test]
    fn observation_is_translation_invariant(seed in any::<u64>(), dx in -0.2..0.2f64, dy in -0.2..0.2f64, dz in -0.05..0.05f64) {
        let sim = sim();
        let (s, o) = sim.reset(seed);
        let shifted = sim.observe(&s.translated(&Vec3::new(dx, dy, dz)));
        prop_assert!(o.max_point_distance(&shifted) <= 1e-12);
        prop_assert_eq!(o.jaw, shifted.jaw);
    }

    #[test]
    fn rotated_scene_gives_same_outcome(seed in any::<u64>(), phi in 0.0..std::f64::consts::TAU) {
        let sim = sim();
        let demo = sim.scripted_demo(seed);
        let s0 = common::initial(&demo).rotated_about_world_z(RotationAngle(phi));
        let rot = RotationAngle(phi);
        let actions: Vec<Action> = demo.transitions.iter().map(|t| Action::new(rot.apply_vec3(&t.action.xyz), t.action.theta, t.action.jaw)).collect();
        let mut i = 0;
        let replay = sim.rollout(s0, |_, _| { let a = actions[i]; i += 1; a });
        prop_assert_eq!(replay.transitions.len(), demo.transitions.len());
        for (a, b) in replay.transitions.iter().zip(&demo.transitions) {
            prop_assert_eq!(a.reward, b.reward);
            prop_assert_eq!(a.terminal, b.terminal);
        }
    }

    #[test]
    fn reset_lies_in_initial_support(seed in any::<u64>()) {
        let sim = sim();
        let (s, o) = sim.reset(seed);
        prop_assert!(sim.in_initial_support(&s));
        prop_assert!(o.validate(1, 0).is_ok());
        prop_assert!(s.gripper.position.xy().norm() <= sim.config().spawn_radius + 1e-12);
    }
}

#[test]
fn scripted_demos_succeed_and_replay() {
    for env in [EnvConfig::default(), EnvConfig::discrete()] {
        let sim = KinSim::new(env.clone()).unwrap();
        for ep in common::demos(&sim, 3, 25) {
            assert!(ep.is_success());
            ep.validate(&env).unwrap();
            let report = sim.replay_check(&ep, common::initial(&ep)).unwrap();
            assert!(report.feasible, "{:?}", report.first_mismatch);
            assert_eq!(report.max_discrepancy, 0.0);
            if env.action_space == ActionSpace::Discrete {
                assert!(ep.transitions.iter().all(|t| DiscreteAction::from_command(&t.action).is_some()));
            }
        }
    }
}

#[test]
fn terminal_state_cannot_be_stepped() {
    let sim = sim();
    let demo = sim.scripted_demo(5);
    let states = sim.replay(&demo, common::initial(&demo)).unwrap();
    let last = states.last().unwrap();
    assert!(matches!(sim.step(last, &Action::hold(-1.0)), Err(Error::SteppedTerminal(_))));
}

#[test]
fn prediction_refuses_contact_regime() {
    let sim = sim();
    let (mut s, _) = sim.reset(1);
    s.gripper.position.z = sim.config().l_z - 0.01;
    assert!(matches!(sim.predict_next_state(&s, &Action::hold(1.0)), Err(Error::AssumptionViolated(_))));
}

#[test]
fn immovable_objects_are_never_grasped() {
    let env = EnvConfig {
        object_count: 2,
        ..EnvConfig::default()
    };
    let sim = KinSim::new(env).unwrap();
    let (s, _) = sim.reset(11);
    let fixed = s.movable.iter().position(|m| !m).unwrap();
    let mut s = SimState {
        gripper: Pose::new(s.objects[fixed].position, 0.0),
        ..s
    };
    s = sim.step(&s, &Action::hold(-1.0)).unwrap().state;
    assert_eq!(s.grasped, None);
    let before = s.objects[fixed].position;
    s = sim.step(&s, &Action::new(Vec3::new(0.0, 0.0, 1.0), 0.0, -1.0)).unwrap().state;
    assert_eq!(s.objects[fixed].position, before);
}

#[test]
fn grasped_object_follows_gripper() {
    let sim = sim();
    let (s, _) = sim.reset(2);
    let s = SimState {
        gripper: Pose::new(s.objects[0].position, 0.3),
        ..s
    };
    let mut s = sim.step(&s, &Action::hold(-1.0)).unwrap().state;
    assert_eq!(s.grasped, Some(0));
    let offset = s.objects[0].position - s.gripper.position;
    for _ in 0..3 {
        s = sim.step(&s, &Action::new(Vec3::new(0.0, 0.0, 1.0), 0.0, -1.0)).unwrap().state;
        assert!((s.objects[0].position - s.gripper.position - offset).amax() < 1e-12);
    }
}
