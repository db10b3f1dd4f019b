//! The outer learning loop: run the controller, grow the dataset, rebuild the
//! ambiguity set, store the trajectory and prune stored trajectories that are
//! no longer safe.

use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{empirical, sample, SampleSet};
use crate::error::{Error, Result};
use crate::mpc::{dr_mpc, ClosedLoopTrajectory, MpcSettings, Plan};
use crate::ocp::{Input, Scenario, State};
use crate::report::{ExperimentReport, IterationRecord, SeedRecord};
use crate::risk::{cvar, AmbiguitySet, TOL_FEAS};
use crate::safeset::SampledSafeSet;

/// Radius of the total-variation ball as a function of the iteration index
/// and the number of collected samples. Values are clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiusSchedule {
    Constant { theta: f64 },
    /// `θ₀ · ratioᴺ` with `N` the sample count.
    SampleGeometric { theta0: f64, ratio: f64 },
    /// `θ₀ · ratioʲ` with `j` the iteration index.
    IterationGeometric { theta0: f64, ratio: f64 },
}

impl RadiusSchedule {
    pub fn radius(&self, iteration: usize, num_samples: usize) -> f64 {
        let raw = match *self {
            RadiusSchedule::Constant { theta } => theta,
            RadiusSchedule::SampleGeometric { theta0, ratio } => theta0 * ratio.powf(num_samples as f64),
            RadiusSchedule::IterationGeometric { theta0, ratio } => theta0 * ratio.powf(iteration as f64),
        };
        raw.clamp(0.0, 1.0)
    }

    pub fn initial(&self) -> f64 {
        match *self {
            RadiusSchedule::Constant { theta } => theta,
            RadiusSchedule::SampleGeometric { theta0, .. } | RadiusSchedule::IterationGeometric { theta0, .. } => {
                theta0
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RadiusSchedule::Constant { theta } => (0.0..=1.0).contains(&theta),
            RadiusSchedule::SampleGeometric { theta0, ratio } | RadiusSchedule::IterationGeometric { theta0, ratio } => {
                (0.0..=1.0).contains(&theta0) && ratio > 0.0 && ratio.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid radius schedule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSettings {
    pub mpc: MpcSettings,
    pub schedule: RadiusSchedule,
    /// Samples drawn from the true distribution before the first iteration.
    pub initial_samples: usize,
    /// Keep the dataset fixed at the initial samples.
    pub freeze_dataset: bool,
}

impl Default for IterationSettings {
    fn default() -> Self {
        Self {
            mpc: MpcSettings::default(),
            schedule: RadiusSchedule::Constant { theta: 5e-2 },
            initial_samples: 5,
            freeze_dataset: false,
        }
    }
}

/// Rest-to-rest motion through `waypoints` (positions) ending at the scenario
/// target. Each leg accelerates for `m` steps and brakes for `m` steps, with
/// the smallest `m` that respects the input and velocity bounds.
pub fn rest_to_rest(scenario: &Scenario, waypoints: &[[f64; 2]]) -> Result<Plan> {
    let coords = scenario.obstacle.position_coords();
    let target = scenario.target();
    let mut points = waypoints.to_vec();
    points.push([target[coords[0]], target[coords[1]]]);
    let umax = scenario.input_box.upper().min().min(-scenario.input_box.lower().max());
    if umax <= 0.0 || scenario.input_dim() != 2 {
        return Err(Error::Seed("rest-to-rest legs need a two-dimensional input box around zero".into()));
    }
    let mut states = vec![scenario.start.clone()];
    let mut inputs: Vec<Input> = Vec::new();
    for point in points {
        let x = states.last().expect("nonempty").clone();
        let from = scenario.obstacle.position(&x);
        let d = [point[0] - from[0], point[1] - from[1]];
        let dist = d[0].abs().max(d[1].abs());
        if dist == 0.0 {
            continue;
        }
        let vmax = velocity_bound(scenario);
        let m = ((dist / umax).sqrt().ceil() as usize)
            .max((dist / vmax).ceil() as usize)
            .max(1);
        let acc = Input::from_vec(vec![d[0] / (m * m) as f64, d[1] / (m * m) as f64]);
        for k in 0..2 * m {
            let u = if k < m { acc.clone() } else { -&acc };
            let next = scenario.dynamics.step(states.last().expect("nonempty"), &u)?;
            states.push(next);
            inputs.push(u);
        }
        let reached = scenario.obstacle.position(states.last().expect("nonempty"));
        if (reached[0] - point[0]).abs() > 1e-9 || (reached[1] - point[1]).abs() > 1e-9 {
            return Err(Error::Seed("dynamics are not a double integrator over the obstacle plane".into()));
        }
    }
    Ok(Plan { states, inputs })
}

fn velocity_bound(scenario: &Scenario) -> f64 {
    let (lo, hi) = (scenario.state_box.lower(), scenario.state_box.upper());
    let coords = scenario.obstacle.position_coords();
    (0..scenario.state_dim())
        .filter(|i| !coords.contains(i))
        .map(|i| hi[i].min(-lo[i]))
        .fold(f64::INFINITY, f64::min)
}

/// Checks that `plan` runs from the start to the target within the boxes and
/// keeps every obstacle penetration at most `δ` for every support point.
pub fn verify_seed(scenario: &Scenario, plan: &Plan) -> Result<()> {
    if plan.states.first() != Some(&scenario.start) {
        return Err(Error::Seed("seed does not start at the start state".into()));
    }
    if (plan.terminal() - scenario.target()).amax() > 1e-9 {
        return Err(Error::Seed("seed does not end at the target".into()));
    }
    for (t, (x, u)) in plan.states.iter().zip(&plan.inputs).enumerate() {
        let next = scenario.dynamics.step(x, u)?;
        if (next - &plan.states[t + 1]).amax() > 1e-9 {
            return Err(Error::Seed(format!("dynamics violated at step {t}")));
        }
        if !scenario.input_box.contains(u, 1e-9) {
            return Err(Error::Seed(format!("input bound violated at step {t}")));
        }
    }
    for (t, x) in plan.states.iter().enumerate() {
        if !scenario.state_box.contains(x, 1e-9) {
            return Err(Error::Seed(format!("state bound violated at step {t}")));
        }
        let worst = scenario.risk_values(x).into_iter().fold(0.0, f64::max);
        if worst > scenario.risk.delta {
            return Err(Error::Seed(format!(
                "penetration {worst:.3e} exceeds the risk level at step {t}"
            )));
        }
    }
    Ok(())
}

/// Whether the straight segment between two positions meets the closed
/// square of half-width `half` around `center`.
fn segment_meets_square(from: [f64; 2], to: [f64; 2], center: [f64; 2], half: f64) -> bool {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for i in 0..2 {
        let d = to[i] - from[i];
        let (a, b) = (center[i] - half - from[i], center[i] + half - from[i]);
        if d == 0.0 {
            if a > 0.0 || b < 0.0 {
                return false;
            }
        } else {
            let (t0, t1) = if d > 0.0 { (a / d, b / d) } else { (b / d, a / d) };
            lo = lo.max(t0);
            hi = hi.min(t1);
        }
    }
    lo <= hi
}

/// Whether the piecewise-linear path through the plan's positions stays
/// clear of the obstacle at every support point.
pub fn path_clears_obstacle(scenario: &Scenario, plan: &Plan) -> bool {
    let obstacle = &scenario.obstacle;
    plan.states.windows(2).all(|w| {
        let (from, to) = (obstacle.position(&w[0]), obstacle.position(&w[1]));
        scenario.support.points().iter().all(|&v| {
            !segment_meets_square(from, to, obstacle.center_at(v), obstacle.half_length())
        })
    })
}

/// A robustly safe initial trajectory stored as iteration 0. Candidate
/// routes are the straight line to the target and the two axis-aligned
/// corner routes; the first whose path between states also avoids every
/// obstacle position is used.
pub fn seed(scenario: &Scenario) -> Result<(SampledSafeSet, Plan)> {
    scenario.validate()?;
    let start = scenario.obstacle.position(&scenario.start);
    let c = scenario.obstacle.position_coords();
    let goal = [scenario.target()[c[0]], scenario.target()[c[1]]];
    let routes: [&[[f64; 2]]; 3] = [&[], &[[start[0], goal[1]]], &[[goal[0], start[1]]]];
    let mut last_err = None;
    for route in routes {
        let plan = rest_to_rest(scenario, route).and_then(|plan| {
            if path_clears_obstacle(scenario, &plan) {
                Ok(plan)
            } else {
                Err(Error::Seed("route passes through the obstacle between states".into()))
            }
        });
        match plan.and_then(|plan| seed_from_plan(scenario, plan)) {
            Ok(seeded) => return Ok(seeded),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Seed("no route available".into())))
}

/// Seeds the safe set from a given trajectory after the robust check.
pub fn seed_from_plan(scenario: &Scenario, mut plan: Plan) -> Result<(SampledSafeSet, Plan)> {
    verify_seed(scenario, &plan)?;
    *plan.states.last_mut().expect("nonempty") = scenario.target().clone();
    let costs = stage_costs(scenario, &plan.states, &plan.inputs);
    let mut ss = SampledSafeSet::new();
    ss.append_trajectory(0, &plan.states, &costs, scenario.target(), 1e-9)?;
    Ok((ss, plan))
}

fn stage_costs(scenario: &Scenario, states: &[State], inputs: &[Input]) -> Vec<f64> {
    states.iter().zip(inputs).map(|(x, u)| scenario.stage_cost(x, u)).collect()
}

/// Data carried from one iteration to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    /// Index of the last completed iteration (0 right after seeding).
    pub iteration: usize,
    pub samples: SampleSet,
    pub ambiguity: AmbiguitySet,
    pub safe_set: SampledSafeSet,
    pub records: Vec<IterationRecord>,
}

impl IterationState {
    /// Draws the initial dataset and builds the first ambiguity set.
    pub fn new<R: Rng + ?Sized>(
        scenario: &Scenario,
        settings: &IterationSettings,
        safe_set: SampledSafeSet,
        rng: &mut R,
    ) -> Result<Self> {
        if settings.initial_samples == 0 {
            return Err(Error::Parameter("at least one initial sample is required".into()));
        }
        let mut samples = SampleSet::new(scenario.support.len());
        samples.push_batch(&sample(&scenario.true_distribution, rng, settings.initial_samples))?;
        let ambiguity = build_ambiguity(scenario, settings, &samples, 0)?;
        Ok(Self {
            iteration: 0,
            samples,
            ambiguity,
            safe_set,
            records: Vec::new(),
        })
    }
}

fn build_ambiguity(
    scenario: &Scenario,
    settings: &IterationSettings,
    samples: &SampleSet,
    iteration: usize,
) -> Result<AmbiguitySet> {
    let center = empirical(samples, &scenario.support)?;
    AmbiguitySet::new(center, settings.schedule.radius(iteration, samples.len()))
}

/// Whether every state keeps the CVaR under the true distribution within `δ`.
pub fn true_risk_safe(scenario: &Scenario, states: &[State]) -> Result<bool> {
    for x in states {
        let c = cvar(&scenario.risk_values(x), &scenario.true_distribution, scenario.risk.beta)?;
        if c > scenario.risk.delta + TOL_FEAS {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest distance between the robot and the nominal obstacle center.
pub fn min_clearance(scenario: &Scenario, states: &[State]) -> f64 {
    states
        .iter()
        .map(|x| scenario.obstacle.clearance_to_nominal(x))
        .fold(f64::INFINITY, f64::min)
}

/// One pass of the outer loop.
pub fn run_iteration<R: Rng + ?Sized>(
    mut state: IterationState,
    scenario: &Scenario,
    settings: &IterationSettings,
    rng: &mut R,
) -> Result<IterationState> {
    let j = state.iteration + 1;
    let used = state.ambiguity.clone();
    let traj: ClosedLoopTrajectory = dr_mpc(scenario, &state.safe_set, &used, &settings.mpc, rng)?;
    if !settings.freeze_dataset {
        state.samples.push_batch(&traj.samples)?;
    }
    state.ambiguity = build_ambiguity(scenario, settings, &state.samples, j)?;
    state
        .safe_set
        .append_trajectory(j, &traj.states, &traj.stage_costs, scenario.target(), 0.0)?;
    let removed = state
        .safe_set
        .prune_unsafe(&state.ambiguity, |x| scenario.risk_values(x), &scenario.risk)?;
    let record = IterationRecord {
        iteration: j,
        radius: used.radius(),
        center: used.center().probs().to_vec(),
        cost: traj.total_cost(),
        collision_steps: traj.collisions.iter().filter(|c| **c).count(),
        true_risk_safe: true_risk_safe(scenario, &traj.states)?,
        min_clearance: min_clearance(scenario, &traj.states),
        removed,
        live_iters: state.safe_set.live_iters(),
        num_samples: state.samples.len(),
        trajectory: traj,
    };
    info!(
        "iteration {j}: cost {:.6}, steps {}, collisions {}, removed {:?}",
        record.cost,
        record.trajectory.len(),
        record.collision_steps,
        record.removed
    );
    state.records.push(record);
    state.iteration = j;
    Ok(state)
}

/// Resumable snapshot of an experiment after a completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    /// Position of the random stream, in 32-bit words.
    pub word_pos: u128,
    pub state: IterationState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Options of [`run_experiment`] beyond the algorithm settings.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions<'a> {
    /// Write `checkpoint_<j>.json` after each iteration into this directory.
    pub checkpoint_dir: Option<&'a Path>,
    /// Continue from this snapshot instead of seeding.
    pub resume: Option<Checkpoint>,
}

/// Seeds, then runs `iterations` passes of the outer loop with a ChaCha8
/// stream seeded by `seed`.
pub fn run_experiment(
    scenario: &Scenario,
    settings: &IterationSettings,
    seed_value: u64,
    iterations: usize,
    options: ExperimentOptions,
) -> Result<ExperimentReport> {
    settings.mpc.validate()?;
    settings.schedule.validate()?;
    let (seed_set, seed_plan) = seed(scenario)?;
    let (mut state, mut rng) = match options.resume {
        Some(cp) => {
            if cp.seed != seed_value {
                return Err(Error::Parameter("checkpoint was written with another seed".into()));
            }
            let rng = cp.rng();
            (cp.state, rng)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
            let state = IterationState::new(scenario, settings, seed_set, &mut rng)?;
            (state, rng)
        }
    };
    while state.iteration < iterations {
        state = run_iteration(state, scenario, settings, &mut rng)?;
        if let Some(dir) = options.checkpoint_dir {
            let cp = Checkpoint {
                seed: seed_value,
                word_pos: rng.get_word_pos(),
                state: state.clone(),
            };
            cp.save(&dir.join(format!("checkpoint_{}.json", state.iteration)))?;
        }
    }
    let seed_costs = stage_costs(scenario, &seed_plan.states, &seed_plan.inputs);
    Ok(ExperimentReport {
        seed: seed_value,
        schedule: settings.schedule,
        seed_trajectory: SeedRecord {
            cost: seed_costs.iter().sum(),
            stage_costs: seed_costs,
            states: seed_plan.states,
            inputs: seed_plan.inputs,
        },
        iterations: state.records,
    })
}
