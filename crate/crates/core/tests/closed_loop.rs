use std::sync::OnceLock;

use drilmpc_core::iterate::{run_iteration, seed, IterationSettings, IterationState, RadiusSchedule};
use drilmpc_core::mpc::{dr_mpc, lyapunov_check, plan_cost, solve_fhp, Condensed, FiniteHorizonProblem, MpcSettings};
use drilmpc_core::risk::AmbiguitySet;
use drilmpc_core::safeset::{SampledSafeSet, TerminalSet};
use drilmpc_core::{run_experiment, ExperimentReport, Scenario, State};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn constant(theta: f64) -> IterationSettings {
    IterationSettings {
        schedule: RadiusSchedule::Constant { theta },
        ..IterationSettings::default()
    }
}

fn true_ambiguity(s: &Scenario, radius: f64) -> AmbiguitySet {
    AmbiguitySet::new(s.true_distribution.clone(), radius).unwrap()
}

/// Twenty-iteration benchmark reports for seeds 1 to 5 at the radii
/// 5e-6, 5e-2 and 0.5, in that order.
fn sweep() -> &'static Vec<[ExperimentReport; 3]> {
    static RUNS: OnceLock<Vec<[ExperimentReport; 3]>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let s = Scenario::benchmark();
        SEEDS
            .iter()
            .map(|&seed| {
                [5e-6, 5e-2, 0.5].map(|theta| run_experiment(&s, &constant(theta), seed, 20, Default::default()).unwrap())
            })
            .collect()
    })
}

/// Smallest signed distance to any obstacle realization along a trajectory.
fn min_distance_to_support(s: &Scenario, states: &[State]) -> f64 {
    states
        .iter()
        .flat_map(|x| s.support.points().iter().map(move |&w| s.obstacle.signed_distance(x, w)))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn starting_at_the_target_takes_no_steps() {
    let mut s = Scenario::benchmark();
    s.start = s.target().clone();
    let target = s.target().clone();
    let mut ss = SampledSafeSet::new();
    ss.append_trajectory(0, &[target.clone(), target.clone()], &[0.0], &target, 0.0)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traj = dr_mpc(&s, &ss, &true_ambiguity(&s, 0.1), &MpcSettings::default(), &mut rng).unwrap();
    assert!(traj.is_empty());
    assert_eq!(traj.states, vec![target]);
}

#[test]
fn seed_prefix_bounds_the_first_objective() {
    let s = Scenario::benchmark();
    let (ss, seed_plan) = seed(&s).unwrap();
    let horizon = 5;
    let terminal = TerminalSet::new(&ss);
    let amb = true_ambiguity(&s, 5e-6);
    let problem = FiniteHorizonProblem {
        scenario: &s,
        x0: s.start.clone(),
        horizon,
        terminal: &terminal,
        ambiguity: &amb,
        candidate_cap: None,
    };
    let sol = solve_fhp(&problem, &Condensed::new(&s, horizon).unwrap(), &[]).unwrap();
    let prefix = drilmpc_core::Plan {
        states: seed_plan.states[..=horizon].to_vec(),
        inputs: seed_plan.inputs[..horizon].to_vec(),
    };
    let bound = plan_cost(&s, &prefix, &terminal);
    assert!(bound.is_finite());
    assert!(sol.objective <= bound + 1e-9, "{} > {bound}", sol.objective);
}

#[test]
fn small_radius_run_converges_with_lyapunov_decrease() {
    let s = Scenario::benchmark();
    let (ss, _) = seed(&s).unwrap();
    let settings = MpcSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let traj = dr_mpc(&s, &ss, &true_ambiguity(&s, 5e-6), &settings, &mut rng).unwrap();
    assert!(traj.len() < settings.max_steps);
    assert_eq!(traj.states.last(), Some(s.target()));
    assert!(traj.states.iter().any(|x| (x - s.target()).norm() <= settings.eps_term));
    assert!(lyapunov_check(&traj.objective_values, &traj.stage_costs, 1e-4));
    assert_eq!(traj.samples.len(), traj.len());
}

#[test]
fn large_radius_keeps_more_distance() {
    let s = Scenario::benchmark();
    for (seed, [small, _, large]) in SEEDS.iter().zip(sweep()) {
        let near = min_distance_to_support(&s, &small.iterations.last().unwrap().trajectory.states);
        let far = min_distance_to_support(&s, &large.iterations.last().unwrap().trajectory.states);
        assert!(far > near, "seed {seed}: {far} <= {near}");
    }
}

#[test]
fn small_radius_is_cheaper() {
    for (seed, [small, _, large]) in SEEDS.iter().zip(sweep()) {
        let cheap = small.iterations.last().unwrap().cost;
        let safe = large.iterations.last().unwrap().cost;
        assert!(cheap < safe, "seed {seed}: {cheap} >= {safe}");
    }
}

#[test]
fn small_radius_collides_more_often() {
    let count = |r: &ExperimentReport| r.collision_iterations().len();
    let small: usize = sweep().iter().map(|[a, _, _]| count(a)).sum();
    let medium: usize = sweep().iter().map(|[_, b, _]| count(b)).sum();
    assert!(small > medium, "{small} colliding iterations at 5e-6, {medium} at 5e-2");
}

#[test]
fn identical_data_grows_the_safe_set() {
    let s = Scenario::benchmark();
    let settings = IterationSettings {
        freeze_dataset: true,
        ..constant(5e-2)
    };
    let (ss, _) = seed(&s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let first = run_iteration(IterationState::new(&s, &settings, ss, &mut rng).unwrap(), &s, &settings, &mut rng).unwrap();
    let second = run_iteration(first.clone(), &s, &settings, &mut rng).unwrap();
    assert_eq!(first.ambiguity, second.ambiguity);
    for e in first.safe_set.entries() {
        assert!(second.safe_set.entries().any(|f| f == e));
    }
    assert!(second.records.last().unwrap().removed.is_empty());
}

#[test]
fn sample_count_grows_by_trajectory_length() {
    let s = Scenario::benchmark();
    let settings = constant(5e-4);
    let (ss, _) = seed(&s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut state = IterationState::new(&s, &settings, ss, &mut rng).unwrap();
    assert_eq!(state.samples.len(), settings.initial_samples);
    for _ in 0..3 {
        let before = state.samples.len();
        state = run_iteration(state, &s, &settings, &mut rng).unwrap();
        let steps = state.records.last().unwrap().trajectory.len();
        assert_eq!(state.samples.len(), before + steps);
        assert_eq!(state.samples.batch_sizes().last(), Some(&steps));
    }
}
