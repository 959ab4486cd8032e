//! Shielded rollout against a brute-force reference that re-simulates the
//! full backup continuation at every step and applies the validity
//! definition literally.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safempd_core::environment::SafeSet;
use safempd_core::shield::{shielded_rollout, ShieldOutcome};
use safempd_core::systems::DoubleIntegrator2D;
use safempd_core::trajectory::{clamp_control, rollout_controls};
use safempd_core::{
    Aabb, BackupPolicy, Control, ControlSequence, CostSpec, DynamicsModel, Goal, Obstacle, SafetySpec, Scenario, State,
};

fn world() -> Scenario {
    let sys = DoubleIntegrator2D::new(0.1, 2.0, 2.0).with_radius(0.3);
    Scenario {
        name: "oracle".into(),
        system: Arc::new(sys),
        obstacles: vec![
            Obstacle::Circle { center: [0.0, 0.0], radius: 1.0 },
            Obstacle::Circle { center: [3.0, 2.5], radius: 0.8 },
            Obstacle::Box { min: [-4.0, 2.0], max: [-2.5, 4.0] },
        ],
        start: State::new(&[-3.0, 0.0, 0.0, 0.0]),
        goal: Goal::at([4.0, 0.0]),
        world: Aabb { min: [-6.0, -6.0], max: [6.0, 6.0] },
        safety: SafetySpec::default(),
        cost: CostSpec::default(),
    }
}

fn backup(tb: usize) -> BackupPolicy {
    BackupPolicy::double_integrator(&DoubleIntegrator2D::new(0.1, 2.0, 2.0), 10.0, tb)
}

/// Reference: at step t, simulate all `T_B` backup steps from the tentative
/// state, store them, and require every one in S and the last in C.
fn reference(x0: &State, nominal: &ControlSequence, policy: &BackupPolicy, s: &Scenario) -> ShieldOutcome {
    let model = &*s.system;
    let pi = |x: &State| {
        let u = if s.in_invariant_set(x) { policy.invariance.control(x) } else { policy.recovery.control(x) };
        clamp_control(&u, model).unwrap()
    };
    let valid = |x: &State| {
        let mut cont = vec![x.clone()];
        for _ in 0..policy.horizon {
            let last = cont.last().unwrap();
            cont.push(model.step(last, &pi(last)));
        }
        cont.iter().all(|z| s.margin(z) <= 0.0) && s.in_invariant_set(cont.last().unwrap())
    };
    let mut states = vec![x0.clone()];
    let mut controls = Vec::new();
    let mut fallback = None;
    for t in 0..nominal.len() {
        let x = states.last().unwrap().clone();
        let u = clamp_control(&nominal.controls[t], model).unwrap();
        let x_hat = model.step(&x, &u);
        if fallback.is_none() && valid(&x_hat) {
            states.push(x_hat);
            controls.push(u);
        } else {
            fallback.get_or_insert(t);
            let u = pi(&x);
            states.push(model.step(&x, &u));
            controls.push(u);
        }
    }
    ShieldOutcome {
        states: safempd_core::StateTrajectory { states },
        controls: ControlSequence::new(controls),
        fallback_index: fallback,
        validity_checks: fallback.map_or(nominal.len(), |f| f + 1),
    }
}

fn sample_in_c(s: &Scenario, rng: &mut ChaCha8Rng) -> State {
    loop {
        let x = State::new(&[
            rng.random_range(-5.5..5.5),
            rng.random_range(-5.5..5.5),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        ]);
        if s.in_invariant_set(&x) {
            return x;
        }
    }
}

fn random_nominal(rng: &mut ChaCha8Rng, len: usize) -> ControlSequence {
    ControlSequence::new((0..len).map(|_| Control::new(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])).collect())
}

#[test]
fn matches_brute_force_reference() {
    let s = world();
    let p = backup(20);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut fallbacks = 0;
    for case in 0..300 {
        let x0 = sample_in_c(&s, &mut rng);
        let nominal = random_nominal(&mut rng, 30);
        let fast = shielded_rollout(&x0, &nominal, &p, &*s.system, &s).unwrap();
        let slow = reference(&x0, &nominal, &p, &s);
        assert_eq!(fast, slow, "case {case}");
        fallbacks += usize::from(fast.fallback_index.is_some());
    }
    // the comparison must exercise both branches
    assert!(fallbacks > 30 && fallbacks < 300, "{fallbacks} fallbacks");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shielded_states_stay_safe_and_follow_the_dynamics(seed in 0u64..1_000_000, tb in 11usize..25) {
        let s = world();
        let p = backup(tb);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = sample_in_c(&s, &mut rng);
        let nominal = random_nominal(&mut rng, 30);
        let out = shielded_rollout(&x0, &nominal, &p, &*s.system, &s).unwrap();
        prop_assert!(out.states.states.iter().all(|x| s.margin(x) <= 0.0));
        prop_assert_eq!(rollout_controls(&x0, &out.controls, &*s.system).unwrap(), out.states.clone());
        for u in &out.controls.controls {
            prop_assert!(u.iter().all(|v| v.abs() <= 2.0));
        }
        if let Some(f) = out.fallback_index {
            prop_assert_eq!(&out.controls.controls[..f], &nominal.controls[..f].iter().map(|u| clamp_control(u, &*s.system).unwrap()).collect::<Vec<_>>()[..]);
        } else {
            prop_assert!(s.in_safe_set(out.states.last()));
        }
    }

    #[test]
    fn accepted_prefix_always_has_a_valid_backup(seed in 0u64..1_000_000) {
        let s = world();
        let p = backup(20);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = sample_in_c(&s, &mut rng);
        let out = shielded_rollout(&x0, &random_nominal(&mut rng, 30), &p, &*s.system, &s).unwrap();
        let end = out.fallback_index.unwrap_or(30);
        for x in &out.states.states[1..=end] {
            prop_assert!(safempd_core::shield::continuation_is_valid(x, &p, &*s.system, &s).unwrap());
        }
    }
}

/// Unit-mass cart on a rail with a wall at `p = 10`.
struct Cart;

impl DynamicsModel for Cart {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn dt(&self) -> f64 {
        0.5
    }
    fn control_lower(&self) -> &[f64] {
        &[-1.0]
    }
    fn control_upper(&self) -> &[f64] {
        &[1.0]
    }
    fn step(&self, x: &State, u: &Control) -> State {
        let dt = 0.5;
        State::new(&[x[0] + x[1] * dt + 0.5 * u[0] * dt * dt, x[1] + u[0] * dt])
    }
}

struct Wall;

impl SafeSet for Wall {
    fn margin(&self, x: &State) -> f64 {
        x[0] - 10.0
    }
    fn in_invariant_set(&self, x: &State) -> bool {
        x[0] <= 10.0 && x[1] == 0.0
    }
}

#[test]
fn cart_stops_before_the_wall() {
    // full brake to exactly zero speed: from v = 2 the cart needs 4 steps and 4 m
    let brake = |x: &State| Control::new(&[(-x[1] / 0.5).clamp(-1.0, 1.0)]);
    let policy = BackupPolicy::new(Arc::new(brake), Arc::new(brake), 6);
    let nominal = ControlSequence::new(vec![Control::new(&[1.0]); 30]);
    let out = shielded_rollout(&State::new(&[0.0, 0.0]), &nominal, &policy, &Cart, &Wall).unwrap();
    let f = out.fallback_index.expect("the wall forces a fallback");
    assert!(out.states.states.iter().all(|x| x[0] <= 10.0));
    assert_eq!(out.states.last()[1], 0.0);

    // the shield accepts a step exactly when the brake from the next state stops by the wall
    let stop = |x: &State| {
        let mut z = x.clone();
        for _ in 0..6 {
            z = Cart.step(&z, &brake(&z));
        }
        z[0] <= 10.0 && z[1] == 0.0
    };
    for t in 0..f {
        assert!(stop(&out.states.states[t + 1]));
    }
    assert!(!stop(&Cart.step(&out.states.states[f], &Control::new(&[1.0]))));
}
