//! Sampled safe set: stored closed-loop states with their realized
//! cost-to-go, pruned whole-trajectory-wise when new data makes a state unsafe.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::State;
use crate::risk::{dr_risk_satisfied, AmbiguitySet, RiskSpec};

/// Grid on which states are compared for identity.
pub const STATE_KEY_RESOLUTION: f64 = 1e-9;

/// Quantized state used for exact set membership.
pub type StateKey = Vec<i64>;

pub fn state_key(x: &State) -> StateKey {
    x.iter()
        .map(|v| (v / STATE_KEY_RESOLUTION).round() as i64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeSetEntry {
    pub iter: usize,
    pub time: usize,
    pub state: State,
    pub cost_to_go: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampledSafeSet {
    /// Entries of each live trajectory, ordered by time starting at `t = 1`.
    trajectories: BTreeMap<usize, Vec<SafeSetEntry>>,
}

impl SampledSafeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn live_iters(&self) -> Vec<usize> {
        self.trajectories.keys().copied().collect()
    }

    pub fn contains_iter(&self, iter: usize) -> bool {
        self.trajectories.contains_key(&iter)
    }

    pub fn trajectory(&self, iter: usize) -> Option<&[SafeSetEntry]> {
        self.trajectories.get(&iter).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = &SafeSetEntry> {
        self.trajectories.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.trajectories.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Entry at `(iter, time)`, if stored.
    pub fn entry(&self, iter: usize, time: usize) -> Option<&SafeSetEntry> {
        let traj = self.trajectories.get(&iter)?;
        time.checked_sub(1).and_then(|i| traj.get(i))
    }

    /// Stores states `x₁ … x_T` of a trajectory `x₀ … x_T` with costs-to-go
    /// from the reverse cumulative sum of `stage_costs` (`r(x_t, u_t)` for
    /// `t < T`). The last state must lie within `tol` of `target` and is
    /// stored as exactly `target` with cost-to-go zero.
    pub fn append_trajectory(
        &mut self,
        iter: usize,
        states: &[State],
        stage_costs: &[f64],
        target: &State,
        tol: f64,
    ) -> Result<()> {
        if self.trajectories.contains_key(&iter) {
            return Err(Error::Trajectory(format!("iteration {iter} is already stored")));
        }
        if states.len() != stage_costs.len() + 1 {
            return Err(Error::Dimension {
                context: "trajectory stage costs",
                expected: states.len().saturating_sub(1),
                actual: stage_costs.len(),
            });
        }
        let last = states.last().expect("at least one state");
        if last.len() != target.len() || (last - target).norm() > tol {
            return Err(Error::Trajectory(format!(
                "trajectory of iteration {iter} ends at {:?}, not at the target",
                last.as_slice()
            )));
        }
        if stage_costs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::Trajectory("stage costs must be finite and nonnegative".into()));
        }
        let horizon = stage_costs.len();
        let mut cost_to_go = vec![0.0; horizon + 1];
        for t in (0..horizon).rev() {
            cost_to_go[t] = stage_costs[t] + cost_to_go[t + 1];
        }
        let entries = (1..=horizon)
            .map(|t| SafeSetEntry {
                iter,
                time: t,
                state: if t == horizon { target.clone() } else { states[t].clone() },
                cost_to_go: cost_to_go[t],
            })
            .collect();
        self.trajectories.insert(iter, entries);
        Ok(())
    }

    /// Removes every trajectory holding a state whose worst-case CVaR over
    /// `amb` exceeds the tolerance, returning the removed iteration indices.
    pub fn prune_unsafe<F>(&mut self, amb: &AmbiguitySet, risk_values: F, spec: &RiskSpec) -> Result<Vec<usize>>
    where
        F: Fn(&State) -> Vec<f64>,
    {
        let mut verdicts: HashMap<StateKey, bool> = HashMap::new();
        let mut removed = Vec::new();
        for (&iter, entries) in &self.trajectories {
            for e in entries {
                let key = state_key(&e.state);
                let safe = match verdicts.get(&key) {
                    Some(&v) => v,
                    None => {
                        let v = dr_risk_satisfied(&risk_values(&e.state), amb, spec)?;
                        verdicts.insert(key, v);
                        v
                    }
                };
                if !safe {
                    removed.push(iter);
                    break;
                }
            }
        }
        for iter in &removed {
            self.trajectories.remove(iter);
        }
        Ok(removed)
    }

    /// Smallest stored cost-to-go at `x`, or `+∞` when `x` is not stored.
    pub fn min_cost_to_go(&self, x: &State) -> f64 {
        let key = state_key(x);
        self.entries()
            .filter(|e| state_key(&e.state) == key)
            .map(|e| e.cost_to_go)
            .fold(f64::INFINITY, f64::min)
    }

    /// Line format `iter t x₁ … xₙ cost_to_go`, one entry per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# iter t state... cost_to_go\n");
        for e in self.entries() {
            write!(out, "{} {}", e.iter, e.time).unwrap();
            for v in e.state.iter() {
                write!(out, " {v:e}").unwrap();
            }
            writeln!(out, " {:e}", e.cost_to_go).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Format {
            what: "safe set",
            message: format!("line {line}: {message}"),
        };
        let mut trajectories: BTreeMap<usize, Vec<SafeSetEntry>> = BTreeMap::new();
        let mut dim = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 4 {
                return Err(bad(no + 1, "expected iter, t, state and cost".into()));
            }
            let iter: usize = fields[0].parse().map_err(|e| bad(no + 1, format!("{e}")))?;
            let time: usize = fields[1].parse().map_err(|e| bad(no + 1, format!("{e}")))?;
            let nums: Vec<f64> = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(no + 1, format!("{e}")))?;
            let (cost, state) = nums.split_last().expect("at least two numbers");
            if *dim.get_or_insert(state.len()) != state.len() {
                return Err(bad(no + 1, "inconsistent state dimension".into()));
            }
            let traj = trajectories.entry(iter).or_default();
            if time != traj.len() + 1 {
                return Err(bad(no + 1, format!("expected time {}, got {time}", traj.len() + 1)));
            }
            traj.push(SafeSetEntry {
                iter,
                time,
                state: State::from_column_slice(state),
                cost_to_go: *cost,
            });
        }
        Ok(Self { trajectories })
    }
}

/// A distinct stored state usable as terminal constraint, with the entry
/// attaining its minimum cost-to-go (lowest `(iter, time)` on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCandidate {
    pub state: State,
    pub cost_to_go: f64,
    pub iter: usize,
    pub time: usize,
}

/// Snapshot of the distinct states of a safe set, indexed by key.
#[derive(Debug, Clone)]
pub struct TerminalSet {
    candidates: Vec<TerminalCandidate>,
    index: HashMap<StateKey, usize>,
}

impl TerminalSet {
    pub fn new(ss: &SampledSafeSet) -> Self {
        let mut by_key: BTreeMap<StateKey, TerminalCandidate> = BTreeMap::new();
        for e in ss.entries() {
            let key = state_key(&e.state);
            let better = by_key.get(&key).is_none_or(|c| e.cost_to_go < c.cost_to_go);
            if better {
                by_key.insert(
                    key,
                    TerminalCandidate {
                        state: e.state.clone(),
                        cost_to_go: e.cost_to_go,
                        iter: e.iter,
                        time: e.time,
                    },
                );
            }
        }
        let mut candidates = Vec::with_capacity(by_key.len());
        let mut index = HashMap::with_capacity(by_key.len());
        for (key, c) in by_key {
            index.insert(key, candidates.len());
            candidates.push(c);
        }
        Self { candidates, index }
    }

    pub fn candidates(&self) -> &[TerminalCandidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn lookup(&self, x: &State) -> Option<&TerminalCandidate> {
        self.index.get(&state_key(x)).map(|&i| &self.candidates[i])
    }

    /// Minimum cost-to-go at `x`, `+∞` off the set.
    pub fn cost_to_go(&self, x: &State) -> f64 {
        self.lookup(x).map_or(f64::INFINITY, |c| c.cost_to_go)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DiscreteDistribution, SupportGrid};

    fn s(xs: &[f64]) -> State {
        State::from_column_slice(xs)
    }

    fn line(n: usize) -> Vec<State> {
        (0..=n).map(|i| s(&[i as f64, 0.0])).collect()
    }

    #[test]
    fn reverse_cumulative_costs() {
        let mut ss = SampledSafeSet::new();
        let target = s(&[3.0, 0.0]);
        ss.append_trajectory(1, &line(3), &[3.0, 2.0, 1.0], &target, 1e-9).unwrap();
        let costs: Vec<f64> = ss.entries().map(|e| e.cost_to_go).collect();
        assert_eq!(costs, vec![3.0, 1.0, 0.0]);
        let times: Vec<usize> = ss.entries().map(|e| e.time).collect();
        assert_eq!(times, vec![1, 2, 3]);
        assert_eq!(ss.min_cost_to_go(&target), 0.0);
    }

    #[test]
    fn resting_trajectory_has_zero_costs() {
        let mut ss = SampledSafeSet::new();
        let target = s(&[1.0, 1.0]);
        ss.append_trajectory(0, &vec![target.clone(); 4], &[0.0; 3], &target, 1e-9)
            .unwrap();
        assert!(ss.entries().all(|e| e.cost_to_go == 0.0));
    }

    #[test]
    fn append_validation() {
        let mut ss = SampledSafeSet::new();
        let target = s(&[3.0, 0.0]);
        assert!(ss.append_trajectory(1, &line(2), &[1.0, 1.0], &target, 1e-2).is_err());
        assert!(ss.append_trajectory(1, &line(3), &[1.0, 1.0], &target, 1e-2).is_err());
        ss.append_trajectory(1, &line(3), &[1.0; 3], &target, 1e-2).unwrap();
        assert!(ss.append_trajectory(1, &line(3), &[1.0; 3], &target, 1e-2).is_err());
        ss.append_trajectory(2, &line(3), &[2.0; 3], &target, 1e-2).unwrap();
        assert_eq!(ss.live_iters(), vec![1, 2]);
    }

    #[test]
    fn final_state_snapped_within_tolerance() {
        let mut ss = SampledSafeSet::new();
        let target = s(&[1.0, 0.0]);
        let states = vec![s(&[0.0, 0.0]), s(&[1.0 + 1e-3, 0.0])];
        ss.append_trajectory(4, &states, &[0.5], &target, 1e-2).unwrap();
        assert_eq!(ss.entry(4, 1).unwrap().state, target);
    }

    #[test]
    fn minimum_over_duplicates_and_absent_states() {
        let mut ss = SampledSafeSet::new();
        let target = s(&[3.0, 0.0]);
        ss.append_trajectory(1, &line(3), &[1.0, 3.1, 1.1], &target, 1e-9).unwrap();
        ss.append_trajectory(2, &line(3), &[1.0, 5.0, 4.2], &target, 1e-9).unwrap();
        assert!((ss.min_cost_to_go(&s(&[1.0, 0.0])) - 4.2).abs() < 1e-12);
        assert!(ss.min_cost_to_go(&s(&[0.5, 0.0])).is_infinite());
        let terminal = TerminalSet::new(&ss);
        assert_eq!(terminal.len(), 3);
        let c = terminal.lookup(&s(&[1.0, 0.0])).unwrap();
        assert_eq!((c.iter, c.time), (1, 1));
        assert!((terminal.cost_to_go(&s(&[2.0, 0.0])) - 1.1).abs() < 1e-12);
        assert!(terminal.cost_to_go(&s(&[7.0, 0.0])).is_infinite());
    }

    #[test]
    fn single_stored_state_cost() {
        let mut ss = SampledSafeSet::new();
        let target = s(&[1.0, 0.0]);
        ss.append_trajectory(0, &[s(&[0.0, 0.0]), s(&[0.5, 0.0]), target.clone()], &[1.0, 4.2], &target, 1e-9)
            .unwrap();
        assert!((ss.min_cost_to_go(&s(&[0.5, 0.0])) - 4.2).abs() < 1e-15);
        assert!((ss.min_cost_to_go(&s(&[0.5 + 1e-12, 0.0])) - 4.2).abs() < 1e-15);
    }

    fn risk_setup() -> (AmbiguitySet, RiskSpec) {
        let support = SupportGrid::new(vec![0.0, 1.0]).unwrap();
        let amb = AmbiguitySet::new(DiscreteDistribution::uniform(support), 0.0).unwrap();
        (amb, RiskSpec::new(0.5, 0.1).unwrap())
    }

    #[test]
    fn pruning_removes_whole_trajectories() {
        let (amb, spec) = risk_setup();
        let target = s(&[3.0, 0.0]);
        let mut ss = SampledSafeSet::new();
        for iter in 0..4 {
            let mut states = line(3);
            if iter == 3 {
                states[1] = s(&[1.0, 5.0]);
            }
            ss.append_trajectory(iter, &states, &[1.0; 3], &target, 1e-9).unwrap();
        }
        // risky exactly where the second coordinate is large
        let risk = |x: &State| vec![0.0, x[1]];
        let removed = ss.prune_unsafe(&amb, risk, &spec).unwrap();
        assert_eq!(removed, vec![3]);
        assert_eq!(ss.live_iters(), vec![0, 1, 2]);
        assert!(ss.entries().all(|e| e.iter != 3));
        assert_eq!(ss.len(), 9);
    }

    #[test]
    fn pruning_keeps_robustly_safe_states() {
        let (amb, spec) = risk_setup();
        let target = s(&[3.0, 0.0]);
        let mut ss = SampledSafeSet::new();
        ss.append_trajectory(0, &line(3), &[1.0; 3], &target, 1e-9).unwrap();
        let removed = ss.prune_unsafe(&amb, |_| vec![0.05, 0.1], &spec).unwrap();
        assert!(removed.is_empty());
    }

    #[test]
    fn text_round_trip() {
        let mut ss = SampledSafeSet::new();
        let target = s(&[3.0, 0.1]);
        let states: Vec<State> = (0..=3).map(|i| s(&[i as f64 / 3.0, 0.1 * i as f64])).collect();
        let mut states = states;
        states[3] = target.clone();
        ss.append_trajectory(0, &states, &[0.1, 0.7, std::f64::consts::PI], &target, 1e-9)
            .unwrap();
        ss.append_trajectory(5, &states, &[1.0 / 3.0, 2.0, 1e-17], &target, 1e-9)
            .unwrap();
        let back = SampledSafeSet::from_text(&ss.to_text()).unwrap();
        assert_eq!(back, ss);
        assert!(SampledSafeSet::from_text("1 2 0.5 1.0\n").is_err());
        assert!(SampledSafeSet::from_text("1 1 0.5\n").is_err());
    }
}
