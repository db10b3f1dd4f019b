//! Experiment records and their on-disk formats.
//!
//! Three files are written per experiment:
//!
//! * `trajectories.csv` with header `iter,t,z,y,vz,vy,az,ay,stage_cost,collision`,
//!   one row per visited state (iteration 0 is the seed). The input, stage
//!   cost and collision columns are empty where undefined.
//! * `summary.json` with per-iteration costs, collisions, pruning history,
//!   controller objective values and the ambiguity sets in use.
//! * `obstacles.csv` with header `iter,t,w,oz,oy`, the realized obstacle
//!   offset and center at each step.
//!
//! Every float is printed with 17 significant digits, which round-trips
//! `f64` exactly.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::iterate::RadiusSchedule;
use crate::mpc::{lyapunov_check, ClosedLoopTrajectory, LYAPUNOV_TOL};
use crate::ocp::{Input, Scenario, State};
use crate::risk::{dr_risk_satisfied, AmbiguitySet};
use crate::distributions::DiscreteDistribution;

pub const TRAJECTORY_HEADER: &str = "iter,t,z,y,vz,vy,az,ay,stage_cost,collision";
pub const OBSTACLE_HEADER: &str = "iter,t,w,oz,oy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
    pub stage_costs: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Radius of the ambiguity set the controller used.
    pub radius: f64,
    /// Center of that ambiguity set.
    pub center: Vec<f64>,
    /// Realized cost `Σ r(x_t, u_t)`.
    pub cost: f64,
    pub collision_steps: usize,
    /// Whether all states satisfy the CVaR bound under the true distribution.
    pub true_risk_safe: bool,
    pub min_clearance: f64,
    /// Iterations pruned from the safe set after this iteration.
    pub removed: Vec<usize>,
    /// Iterations stored in the safe set after pruning.
    pub live_iters: Vec<usize>,
    pub num_samples: usize,
    pub trajectory: ClosedLoopTrajectory,
}

impl IterationRecord {
    pub fn collided(&self) -> bool {
        self.collision_steps > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub schedule: RadiusSchedule,
    pub seed_trajectory: SeedRecord,
    pub iterations: Vec<IterationRecord>,
}

impl ExperimentReport {
    pub fn costs(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.cost).collect()
    }

    pub fn collision_iterations(&self) -> Vec<usize> {
        self.iterations.iter().filter(|r| r.collided()).map(|r| r.iteration).collect()
    }

    /// Fraction of iterations whose trajectory meets the CVaR bound under the
    /// true distribution at every step.
    pub fn safety_frequency(&self) -> Option<f64> {
        if self.iterations.is_empty() {
            return None;
        }
        let safe = self.iterations.iter().filter(|r| r.true_risk_safe).count();
        Some(safe as f64 / self.iterations.len() as f64)
    }

    pub fn summary(&self) -> Summary {
        Summary {
            seed: self.seed,
            schedule: self.schedule,
            seed_cost: self.seed_trajectory.cost,
            costs: self.costs(),
            collision_iterations: self.collision_iterations(),
            safety_frequency: self.safety_frequency(),
            iterations: self
                .iterations
                .iter()
                .map(|r| IterationSummary {
                    iteration: r.iteration,
                    radius: r.radius,
                    center: r.center.clone(),
                    cost: r.cost,
                    steps: r.trajectory.len(),
                    collision_steps: r.collision_steps,
                    true_risk_safe: r.true_risk_safe,
                    min_clearance: r.min_clearance,
                    removed: r.removed.clone(),
                    live_iters: r.live_iters.clone(),
                    num_samples: r.num_samples,
                    objective_values: r.trajectory.objective_values.clone(),
                    shift_feasible: r.trajectory.shift_feasible.clone(),
                })
                .collect(),
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub schedule: RadiusSchedule,
    pub seed_cost: f64,
    pub costs: Vec<f64>,
    pub collision_iterations: Vec<usize>,
    pub safety_frequency: Option<f64>,
    pub iterations: Vec<IterationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub radius: f64,
    pub center: Vec<f64>,
    pub cost: f64,
    pub steps: usize,
    pub collision_steps: usize,
    pub true_risk_safe: bool,
    pub min_clearance: f64,
    pub removed: Vec<usize>,
    pub live_iters: Vec<usize>,
    pub num_samples: usize,
    pub objective_values: Vec<f64>,
    pub shift_feasible: Vec<bool>,
}

/// JSON formatter printing floats as `{:.16e}` with pretty indentation.
struct ScientificFormatter(PrettyFormatter<'static>);

impl Formatter for ScientificFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serializes any value as JSON with 17-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ScientificFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn summary_json(report: &ExperimentReport) -> Result<String> {
    to_json_string(&report.summary())
}

pub fn parse_summary(text: &str) -> Result<Summary> {
    Ok(serde_json::from_str(text)?)
}

fn push_float(out: &mut String, value: f64) {
    write!(out, "{value:.16e}").expect("writing to a String");
}

fn check_layout(scenario: &Scenario) -> Result<()> {
    if scenario.state_dim() != 4 || scenario.input_dim() != 2 {
        return Err(Error::Format {
            what: "trajectory table",
            message: "the CSV layout needs four states and two inputs".into(),
        });
    }
    Ok(())
}

fn push_rows(
    out: &mut String,
    iter: usize,
    states: &[State],
    inputs: &[Input],
    stage_costs: &[f64],
    collisions: Option<&[bool]>,
) {
    for (t, x) in states.iter().enumerate() {
        write!(out, "{iter},{t}").expect("writing to a String");
        for v in x.iter() {
            out.push(',');
            push_float(out, *v);
        }
        match inputs.get(t) {
            Some(u) => {
                for v in u.iter() {
                    out.push(',');
                    push_float(out, *v);
                }
            }
            None => out.push_str(",,"),
        }
        out.push(',');
        if let Some(c) = stage_costs.get(t) {
            push_float(out, *c);
        }
        out.push(',');
        if let Some(flag) = t.checked_sub(1).and_then(|i| collisions.and_then(|c| c.get(i))) {
            out.push(if *flag { '1' } else { '0' });
        }
        out.push('\n');
    }
}

/// `trajectories.csv` contents: the seed as iteration 0, then every iteration.
pub fn trajectories_csv(report: &ExperimentReport, scenario: &Scenario) -> Result<String> {
    check_layout(scenario)?;
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    let seed = &report.seed_trajectory;
    push_rows(&mut out, 0, &seed.states, &seed.inputs, &seed.stage_costs, None);
    for r in &report.iterations {
        let tr = &r.trajectory;
        push_rows(&mut out, r.iteration, &tr.states, &tr.inputs, &tr.stage_costs, Some(&tr.collisions));
    }
    Ok(out)
}

/// `obstacles.csv` contents: realized offset and obstacle center per step.
pub fn obstacles_csv(report: &ExperimentReport, scenario: &Scenario) -> String {
    let mut out = String::from(OBSTACLE_HEADER);
    out.push('\n');
    for r in &report.iterations {
        for (i, &w_idx) in r.trajectory.samples.iter().enumerate() {
            let w = scenario.support.points()[w_idx];
            let o = scenario.obstacle.center_at(w);
            write!(out, "{},{},", r.iteration, i + 1).expect("writing to a String");
            push_float(&mut out, w);
            out.push(',');
            push_float(&mut out, o[0]);
            out.push(',');
            push_float(&mut out, o[1]);
            out.push('\n');
        }
    }
    out
}

/// File locations of one emitted report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub trajectories: PathBuf,
    pub summary: PathBuf,
    pub obstacles: PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            trajectories: dir.join("trajectories.csv"),
            summary: dir.join("summary.json"),
            obstacles: dir.join("obstacles.csv"),
        }
    }
}

pub fn emit_report(report: &ExperimentReport, scenario: &Scenario, paths: &ReportPaths) -> Result<()> {
    for path in [&paths.trajectories, &paths.summary, &paths.obstacles] {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&paths.trajectories, trajectories_csv(report, scenario)?)?;
    std::fs::write(&paths.summary, summary_json(report)?)?;
    std::fs::write(&paths.obstacles, obstacles_csv(report, scenario))?;
    Ok(())
}

/// One parsed row of `trajectories.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub t: usize,
    pub state: State,
    pub input: Option<Input>,
    pub stage_cost: Option<f64>,
    pub collision: Option<bool>,
}

fn csv_error(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        what: "trajectory table",
        message: format!("line {line}: {}", message.into()),
    }
}

pub fn parse_trajectories_csv(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRAJECTORY_HEADER) {
        return Err(csv_error(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(csv_error(n, format!("expected 10 fields, found {}", fields.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| csv_error(n, e.to_string()));
        let float = |s: &str| s.parse::<f64>().map_err(|e| csv_error(n, e.to_string()));
        let opt_float = |s: &str| if s.is_empty() { Ok(None) } else { float(s).map(Some) };
        let state = State::from_vec(fields[2..6].iter().map(|s| float(s)).collect::<Result<_>>()?);
        let input = match (opt_float(fields[6])?, opt_float(fields[7])?) {
            (Some(a), Some(b)) => Some(Input::from_vec(vec![a, b])),
            (None, None) => None,
            _ => return Err(csv_error(n, "partial input")),
        };
        let collision = match fields[9] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(csv_error(n, format!("bad collision flag {other:?}"))),
        };
        rows.push(TrajectoryRow {
            iter: int(fields[0])?,
            t: int(fields[1])?,
            state,
            input,
            stage_cost: opt_float(fields[8])?,
            collision,
        });
    }
    Ok(rows)
}

/// Groups parsed rows by iteration, checking that `t` counts up from 0.
pub fn group_rows(rows: &[TrajectoryRow]) -> Result<Vec<(usize, Vec<&TrajectoryRow>)>> {
    let mut groups: Vec<(usize, Vec<&TrajectoryRow>)> = Vec::new();
    for row in rows {
        match groups.last_mut() {
            Some((iter, group)) if *iter == row.iter => group.push(row),
            _ => groups.push((row.iter, vec![row])),
        }
    }
    for (iter, group) in &groups {
        if group.iter().enumerate().any(|(t, r)| r.t != t) {
            return Err(Error::Format {
                what: "trajectory table",
                message: format!("time index of iteration {iter} does not count up from 0"),
            });
        }
    }
    Ok(groups)
}

/// Runs the invariant suite on an emitted report, returning one message per
/// violated invariant (empty when everything holds).
pub fn verify_report(scenario: &Scenario, summary: &Summary, rows: &[TrajectoryRow]) -> Result<Vec<String>> {
    let mut failures = Vec::new();
    let groups = group_rows(rows)?;
    if groups.len() != summary.iterations.len() + 1 {
        failures.push(format!(
            "{} trajectories in the table, summary lists {} iterations plus the seed",
            groups.len(),
            summary.iterations.len()
        ));
        return Ok(failures);
    }
    for (idx, (iter, group)) in groups.iter().enumerate() {
        if *iter != idx {
            failures.push(format!("trajectory {idx} is labeled iteration {iter}"));
            continue;
        }
        let states: Vec<&State> = group.iter().map(|r| &r.state).collect();
        if states.first().copied() != Some(&scenario.start) {
            failures.push(format!("iteration {iter} does not start at the start state"));
        }
        if states.last().copied() != Some(scenario.target()) {
            failures.push(format!("iteration {iter} does not end at the target"));
        }
        let mut stage_costs = Vec::new();
        for (t, pair) in group.windows(2).enumerate() {
            let Some(u) = &pair[0].input else {
                failures.push(format!("iteration {iter}: missing input at t={t}"));
                break;
            };
            let next = scenario.dynamics.step(&pair[0].state, u)?;
            if (next - &pair[1].state).amax() > 1e-8 {
                failures.push(format!("iteration {iter}: dynamics violated at t={t}"));
            }
            let cost = scenario.stage_cost(&pair[0].state, u);
            if pair[0].stage_cost != Some(cost) {
                failures.push(format!("iteration {iter}: stage cost mismatch at t={t}"));
            }
            stage_costs.push(cost);
        }
        if idx == 0 {
            continue;
        }
        let s = &summary.iterations[idx - 1];
        let total: f64 = stage_costs.iter().sum();
        if !(s.cost.is_finite() && s.cost >= 0.0) || (total - s.cost).abs() > 1e-9 * (1.0 + total) {
            failures.push(format!("iteration {iter}: cost {} does not match the table", s.cost));
        }
        let flags = group.iter().skip(1).filter(|r| r.collision == Some(true)).count();
        if flags != s.collision_steps {
            failures.push(format!("iteration {iter}: collision count mismatch"));
        }
        if !lyapunov_check(&s.objective_values, &stage_costs, LYAPUNOV_TOL) {
            failures.push(format!("iteration {iter}: objective values do not decrease"));
        }
        if s.shift_feasible.iter().any(|ok| !ok) {
            failures.push(format!("iteration {iter}: a shifted plan was infeasible"));
        }
        let center = DiscreteDistribution::new(scenario.support.clone(), s.center.clone())?;
        let amb = AmbiguitySet::new(center, s.radius)?;
        for (t, x) in states.iter().enumerate() {
            if !dr_risk_satisfied(&scenario.risk_values(x), &amb, &scenario.risk)? {
                failures.push(format!("iteration {iter}: risk constraint violated at t={t}"));
            }
        }
    }
    Ok(failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::SupportGrid;

    fn tiny_report(scenario: &Scenario) -> ExperimentReport {
        let x0 = scenario.start.clone();
        let u = Input::from_vec(vec![0.1, -1.0 / 3.0]);
        let x1 = scenario.dynamics.step(&x0, &u).unwrap();
        let c = scenario.stage_cost(&x0, &u);
        ExperimentReport {
            seed: 1,
            schedule: RadiusSchedule::Constant { theta: 0.05 },
            seed_trajectory: SeedRecord {
                states: vec![x0.clone(), x1.clone()],
                inputs: vec![u.clone()],
                stage_costs: vec![c],
                cost: c,
            },
            iterations: vec![IterationRecord {
                iteration: 1,
                radius: 0.05,
                center: vec![1.0 / 3.0; 3],
                cost: c,
                collision_steps: 1,
                true_risk_safe: false,
                min_clearance: std::f64::consts::PI,
                removed: vec![],
                live_iters: vec![0, 1],
                num_samples: 6,
                trajectory: ClosedLoopTrajectory {
                    states: vec![x0, x1],
                    inputs: vec![u],
                    stage_costs: vec![c],
                    samples: vec![2],
                    collisions: vec![true],
                    objective_values: vec![c],
                    shift_feasible: vec![],
                },
            }],
        }
    }

    fn small_scenario() -> Scenario {
        let mut s = Scenario::benchmark();
        s.support = SupportGrid::new(vec![-0.5, 0.0, 0.5]).unwrap();
        s.true_distribution = DiscreteDistribution::uniform(s.support.clone());
        s
    }

    #[test]
    fn empty_report_gives_header_only_tables() {
        let s = small_scenario();
        let mut report = tiny_report(&s);
        report.iterations.clear();
        assert_eq!(obstacles_csv(&report, &s), format!("{OBSTACLE_HEADER}\n"));
        let csv = trajectories_csv(&report, &s).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = small_scenario();
        let report = tiny_report(&s);
        let rows = parse_trajectories_csv(&trajectories_csv(&report, &s).unwrap()).unwrap();
        assert_eq!(rows.len(), 4);
        let traj = &report.iterations[0].trajectory;
        assert_eq!(rows[2].state, traj.states[0]);
        assert_eq!(rows[2].input.as_ref(), Some(&traj.inputs[0]));
        assert_eq!(rows[2].stage_cost, Some(traj.stage_costs[0]));
        assert_eq!(rows[2].collision, None);
        assert_eq!(rows[3].state, traj.states[1]);
        assert_eq!(rows[3].input, None);
        assert_eq!(rows[3].collision, Some(true));
    }

    #[test]
    fn summary_round_trip_is_exact() {
        let s = small_scenario();
        let report = tiny_report(&s);
        let text = summary_json(&report).unwrap();
        assert!(text.contains("3.1415926535897931e0"));
        assert_eq!(parse_summary(&text).unwrap(), report.summary());
    }

    #[test]
    fn obstacle_rows() {
        let s = small_scenario();
        let csv = obstacles_csv(&tiny_report(&s), &s);
        let row = csv.lines().nth(1).unwrap();
        let o = s.obstacle.center_at(0.5);
        assert_eq!(row, format!("1,1,{:.16e},{:.16e},{:.16e}", 0.5, o[0], o[1]));
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(parse_trajectories_csv("a,b\n").is_err());
        let bad = format!("{TRAJECTORY_HEADER}\n0,0,1,2,3\n");
        assert!(parse_trajectories_csv(&bad).is_err());
    }
}
