//! Finite-horizon distributionally robust MPC and its closed loop.
//!
//! # Solver
//!
//! The terminal constraint `x_K ∈ safe set` is discrete, so every stored
//! state is a candidate. Candidates are visited in order of a lower bound
//! (the equality-constrained quadratic relaxation, solved in closed form, plus
//! the stored cost-to-go) and skipped once the bound reaches the incumbent.
//!
//! For one candidate the problem is a convex QP apart from the risk
//! constraint. Each atom's penetration `[minⱼ fⱼ]₊` is bounded above by
//! `[fⱼ*]₊` for any single face `j*`, which is affine in the inputs. Freezing
//! one face per atom and step therefore yields a convex inner restriction,
//! and the worst-case CVaR bound of that restriction is linear in the dual
//! variables `(λ, η, ν, c)`. The restriction is re-linearized at each
//! solution until the faces stop changing. Every returned plan is verified
//! against the exact risk oracle, the boxes, the dynamics and the safe set.

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample, SupportGrid};
use crate::error::{check_dim, Error, Result};
use crate::ocp::{Input, Scenario, State, FACE_NORMALS};
use crate::qp::{solve_qp, QpProblem, QpStatus};
use crate::risk::{dr_risk_satisfied, worst_case_cvar_dual, AmbiguitySet};
use crate::safeset::{SampledSafeSet, TerminalCandidate, TerminalSet};

/// Box and dynamics tolerance when verifying a plan.
pub const PLAN_TOL: f64 = 1e-8;
/// Default tolerance of the per-step cost decrease test.
pub const LYAPUNOV_TOL: f64 = 1e-4;

/// Atoms whose frozen face value is below `-FAR_MARGIN` only receive a
/// half-plane keeping their penetration at zero.
const FAR_MARGIN: f64 = 0.25;
const MAX_RESTRICTION_ROUNDS: usize = 12;
/// Hessian weight on the dual variables of the risk reformulation.
const DUAL_REGULARIZATION: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcSettings {
    pub horizon: usize,
    pub eps_term: f64,
    pub max_steps: usize,
    /// Keep only this many terminal candidates (smallest lower bounds first).
    pub candidate_cap: Option<usize>,
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self {
            horizon: 5,
            eps_term: 1e-2,
            max_steps: 500,
            candidate_cap: None,
        }
    }
}

impl MpcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Parameter("horizon must be at least 1".into()));
        }
        if !(self.eps_term > 0.0 && self.eps_term.is_finite()) {
            return Err(Error::Parameter("termination radius must be positive".into()));
        }
        if self.candidate_cap == Some(0) {
            return Err(Error::Parameter("candidate cap must be positive".into()));
        }
        Ok(())
    }
}

/// A state and input sequence `x₀ … x_K`, `u₀ … u_{K−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
}

impl Plan {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn terminal(&self) -> &State {
        self.states.last().expect("plans hold at least one state")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FhpSolution {
    pub plan: Plan,
    /// Predicted stage costs plus the terminal cost-to-go.
    pub objective: f64,
    pub terminal: TerminalCandidate,
    /// Number of candidates for which a subproblem was solved.
    pub candidates_solved: usize,
}

/// One instance of the finite-horizon problem at state `x0`.
#[derive(Debug, Clone)]
pub struct FiniteHorizonProblem<'a> {
    pub scenario: &'a Scenario,
    pub x0: State,
    pub horizon: usize,
    pub terminal: &'a TerminalSet,
    pub ambiguity: &'a AmbiguitySet,
    pub candidate_cap: Option<usize>,
}

/// Outcome of verifying a plan against every constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanCheck {
    Feasible { objective: f64 },
    Infeasible(String),
}

impl PlanCheck {
    pub fn is_feasible(&self) -> bool {
        matches!(self, PlanCheck::Feasible { .. })
    }
}

/// Sum of predicted stage costs plus the terminal cost-to-go.
pub fn plan_cost(scenario: &Scenario, plan: &Plan, terminal: &TerminalSet) -> f64 {
    let stages: f64 = plan
        .states
        .iter()
        .zip(&plan.inputs)
        .map(|(x, u)| scenario.stage_cost(x, u))
        .sum();
    stages + terminal.cost_to_go(plan.terminal())
}

/// Exact verification of a plan for the problem at `x0`: dynamics and boxes
/// within [`PLAN_TOL`], the distributionally robust risk constraint at
/// `k = 0 … K−1` via the dual oracle, and terminal membership.
pub fn check_plan(
    scenario: &Scenario,
    ambiguity: &AmbiguitySet,
    terminal: &TerminalSet,
    x0: &State,
    plan: &Plan,
) -> Result<PlanCheck> {
    let k = plan.horizon();
    if plan.states.len() != k + 1 || k == 0 {
        return Ok(PlanCheck::Infeasible("malformed plan".into()));
    }
    if (&plan.states[0] - x0).amax() > PLAN_TOL {
        return Ok(PlanCheck::Infeasible("plan does not start at the current state".into()));
    }
    for t in 0..k {
        let next = scenario.dynamics.step(&plan.states[t], &plan.inputs[t])?;
        if (next - &plan.states[t + 1]).amax() > PLAN_TOL {
            return Ok(PlanCheck::Infeasible(format!("dynamics violated at step {t}")));
        }
        if !scenario.input_box.contains(&plan.inputs[t], PLAN_TOL) {
            return Ok(PlanCheck::Infeasible(format!("input box violated at step {t}")));
        }
        if !scenario.state_box.contains(&plan.states[t + 1], PLAN_TOL) {
            return Ok(PlanCheck::Infeasible(format!("state box violated at step {}", t + 1)));
        }
    }
    if terminal.lookup(plan.terminal()).is_none() {
        return Ok(PlanCheck::Infeasible("terminal state is not in the safe set".into()));
    }
    for (t, x) in plan.states[..k].iter().enumerate() {
        if !dr_risk_satisfied(&scenario.risk_values(x), ambiguity, &scenario.risk)? {
            return Ok(PlanCheck::Infeasible(format!("risk constraint violated at step {t}")));
        }
    }
    Ok(PlanCheck::Feasible {
        objective: plan_cost(scenario, plan, terminal),
    })
}

/// Prediction matrices `x_k = Aᵏ x₀ + Γ_k u` for stacked inputs `u`, and the
/// condensed quadratic cost.
#[derive(Debug, Clone)]
pub struct Condensed {
    nx: usize,
    nu: usize,
    horizon: usize,
    powers: Vec<DMatrix<f64>>,
    gamma: Vec<DMatrix<f64>>,
    hessian: DMatrix<f64>,
    hessian_inv: DMatrix<f64>,
    /// Orthonormal basis of the range of `Γ_K`.
    eq_basis: DMatrix<f64>,
    /// Independent terminal equality rows `eq_basisᵀ Γ_K`.
    eq_rows: DMatrix<f64>,
    /// `(E H⁻¹ Eᵀ)⁻¹` for the reduced equality rows `E`.
    schur_inv: DMatrix<f64>,
}

impl Condensed {
    pub fn new(scenario: &Scenario, horizon: usize) -> Result<Self> {
        let (nx, nu) = (scenario.state_dim(), scenario.input_dim());
        let n = nu * horizon;
        let a = scenario.dynamics.a();
        let b = scenario.dynamics.b();
        let mut powers = vec![DMatrix::identity(nx, nx)];
        let mut gamma = vec![DMatrix::zeros(nx, n)];
        for k in 0..horizon {
            powers.push(a * &powers[k]);
            let mut g = a * &gamma[k];
            g.view_mut((0, k * nu), (nx, nu)).copy_from(b);
            gamma.push(g);
        }
        let q = scenario.cost.q();
        let mut hessian = DMatrix::zeros(n, n);
        for g in gamma.iter().take(horizon) {
            hessian += g.transpose() * q * g;
        }
        for k in 0..horizon {
            let mut block = hessian.view_mut((k * nu, k * nu), (nu, nu));
            block += scenario.cost.r();
        }
        hessian *= 2.0;
        let hessian_inv = hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("condensed hessian is not positive definite".into()))?
            .inverse();

        let terminal_map = &gamma[horizon];
        let svd = terminal_map.clone().svd(true, false);
        let u = svd.u.expect("requested left singular vectors");
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-10 * smax.max(1.0))
            .count();
        let eq_basis = u.columns(0, rank).into_owned();
        let eq_rows = eq_basis.transpose() * terminal_map;
        let schur = &eq_rows * &hessian_inv * eq_rows.transpose();
        let schur_inv = if rank == 0 {
            DMatrix::zeros(0, 0)
        } else {
            schur
                .cholesky()
                .ok_or_else(|| Error::Numerical("terminal schur complement is singular".into()))?
                .inverse()
        };
        Ok(Self {
            nx,
            nu,
            horizon,
            powers,
            gamma,
            hessian,
            hessian_inv,
            eq_basis,
            eq_rows,
            schur_inv,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn num_inputs(&self) -> usize {
        self.nu * self.horizon
    }
}

/// Per-state data shared by all candidates of one solve.
struct SolveContext<'p, 'a> {
    p: &'p FiniteHorizonProblem<'a>,
    cond: &'p Condensed,
    free: Vec<State>,
    linear: DVector<f64>,
    unconstrained: DVector<f64>,
    unconstrained_value: f64,
    box_rows: Vec<(DVector<f64>, f64)>,
    boxes_impossible: bool,
}

impl<'p, 'a> SolveContext<'p, 'a> {
    fn new(p: &'p FiniteHorizonProblem<'a>, cond: &'p Condensed) -> Self {
        let scenario = p.scenario;
        let target = scenario.target();
        let q = scenario.cost.q();
        let k_max = cond.horizon;
        let free: Vec<State> = cond.powers.iter().map(|pk| pk * &p.x0).collect();
        let mut linear = DVector::zeros(cond.num_inputs());
        let mut constant = 0.0;
        for k in 0..k_max {
            let e = &free[k] - target;
            let qe = q * &e;
            linear += 2.0 * cond.gamma[k].tr_mul(&qe);
            constant += e.dot(&qe);
        }
        let unconstrained = -(&cond.hessian_inv * &linear);
        let unconstrained_value = 0.5 * linear.dot(&unconstrained) + constant;

        let mut box_rows = Vec::new();
        let mut boxes_impossible = false;
        let n = cond.num_inputs();
        let (ulo, uhi) = (scenario.input_box.lower(), scenario.input_box.upper());
        for k in 0..k_max {
            for i in 0..cond.nu {
                let mut e = DVector::zeros(n);
                e[k * cond.nu + i] = 1.0;
                box_rows.push((e.clone(), ulo[i]));
                box_rows.push((-e, -uhi[i]));
            }
        }
        let (xlo, xhi) = (scenario.state_box.lower(), scenario.state_box.upper());
        for k in 1..k_max {
            for i in 0..cond.nx {
                let row: DVector<f64> = cond.gamma[k].row(i).transpose();
                let offset = free[k][i];
                if row.amax() == 0.0 {
                    if offset < xlo[i] - PLAN_TOL || offset > xhi[i] + PLAN_TOL {
                        boxes_impossible = true;
                    }
                    continue;
                }
                box_rows.push((row.clone(), xlo[i] - offset));
                box_rows.push((-row, offset - xhi[i]));
            }
        }
        Self {
            p,
            cond,
            free,
            linear,
            unconstrained,
            unconstrained_value,
            box_rows,
            boxes_impossible,
        }
    }

    /// Reduced terminal equality `E u = rhs`, or `None` if `x_c` is not
    /// reachable even without boxes.
    fn terminal_equality(&self, target: &State) -> Option<DVector<f64>> {
        let k = self.cond.horizon;
        let needed = target - &self.free[k];
        let rhs = self.cond.eq_basis.tr_mul(&needed);
        let residual = (&needed - &self.cond.eq_basis * &rhs).amax();
        (residual <= 1e-9 * (1.0 + needed.amax())).then_some(rhs)
    }

    /// Optimal value of the relaxation without boxes or risk.
    fn lower_bound(&self, cand: &TerminalCandidate) -> f64 {
        let Some(rhs) = self.terminal_equality(&cand.state) else {
            return f64::INFINITY;
        };
        let e = rhs - &self.cond.eq_rows * &self.unconstrained;
        self.unconstrained_value + 0.5 * e.dot(&(&self.cond.schur_inv * &e)) + cand.cost_to_go
    }

    fn plan_from_inputs(&self, u: &DVector<f64>, terminal: &State) -> Result<Plan> {
        let (nu, k_max) = (self.cond.nu, self.cond.horizon);
        let dynamics = &self.p.scenario.dynamics;
        let mut states = vec![self.p.x0.clone()];
        let mut inputs = Vec::with_capacity(k_max);
        for k in 0..k_max {
            let uk = u.rows(k * nu, nu).into_owned();
            states.push(dynamics.step(&states[k], &uk)?);
            inputs.push(uk);
        }
        // the equality holds to rounding; store the exact safe-set state
        states[k_max] = terminal.clone();
        Ok(Plan { states, inputs })
    }

    /// QP over the inputs (first block) plus `extra` variables.
    fn base_qp(&self, extra: usize, eq_rhs: &DVector<f64>) -> Result<QpProblem> {
        let n = self.cond.num_inputs();
        let total = n + extra;
        let mut hessian = DMatrix::zeros(total, total);
        hessian.view_mut((0, 0), (n, n)).copy_from(&self.cond.hessian);
        for i in n..total {
            hessian[(i, i)] = DUAL_REGULARIZATION;
        }
        let mut linear = DVector::zeros(total);
        linear.rows_mut(0, n).copy_from(&self.linear);
        let mut qp = QpProblem::new(hessian, linear)?;
        for (i, rhs) in eq_rhs.iter().enumerate() {
            let mut row = DVector::zeros(total);
            row.rows_mut(0, n).copy_from(&self.cond.eq_rows.row(i).transpose());
            qp.add_eq(row, *rhs)?;
        }
        for (row, rhs) in &self.box_rows {
            let mut full = DVector::zeros(total);
            full.rows_mut(0, n).copy_from(row);
            qp.add_ge(full, *rhs)?;
        }
        Ok(qp)
    }

    fn solve_box_only(&self, eq_rhs: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let qp = self.base_qp(0, eq_rhs)?;
        let sol = solve_qp(&qp)?;
        Ok((sol.status == QpStatus::Optimal).then_some(sol.z))
    }

    /// Inner convex restriction with one face frozen per atom and risk step,
    /// chosen at the positions of `freeze`.
    fn solve_restricted(&self, eq_rhs: &DVector<f64>, freeze: &[State]) -> Result<Option<DVector<f64>>> {
        let scenario = self.p.scenario;
        let obstacle = &scenario.obstacle;
        let support: &SupportGrid = &scenario.support;
        let probs = self.p.ambiguity.center().probs();
        let beta = scenario.risk.beta;
        let n = self.cond.num_inputs();
        let [pz, py] = obstacle.position_coords();

        struct StepRows {
            near: Vec<(DVector<f64>, f64, f64)>,
            far_prob: f64,
            has_far: bool,
            half_planes: Vec<(DVector<f64>, f64)>,
        }
        let mut steps = Vec::new();
        for k in 1..self.cond.horizon {
            let frozen = &freeze[k];
            let mut rows = StepRows {
                near: Vec::new(),
                far_prob: 0.0,
                has_far: false,
                half_planes: Vec::new(),
            };
            let gamma = &self.cond.gamma[k];
            let free_pos = [self.free[k][pz], self.free[k][py]];
            for (l, &w) in support.points().iter().enumerate() {
                let faces = obstacle.face_values(frozen, w);
                let j = (1..faces.len()).fold(0, |b, j| if faces[j] < faces[b] { j } else { b });
                let normal = FACE_NORMALS[j];
                let o = obstacle.center_at(w);
                // face value f(u) = constant - row·u
                let row: DVector<f64> =
                    (gamma.row(pz) * normal[0] + gamma.row(py) * normal[1]).transpose();
                let constant = obstacle.half_length() + normal[0] * (o[0] - free_pos[0])
                    + normal[1] * (o[1] - free_pos[1]);
                if faces[j] >= -FAR_MARGIN {
                    rows.near.push((row, constant, probs[l]));
                } else {
                    rows.far_prob += probs[l];
                    rows.has_far = true;
                    if row.amax() == 0.0 {
                        if constant > 0.0 {
                            return Ok(None);
                        }
                    } else {
                        rows.half_planes.push((row, constant));
                    }
                }
            }
            steps.push(rows);
        }

        let extra: usize = steps
            .iter()
            .filter(|s| !s.near.is_empty())
            .map(|s| 3 + s.near.len() + usize::from(s.has_far))
            .sum();
        let mut qp = self.base_qp(extra, eq_rhs)?;
        let total = n + extra;
        let mut offset = n;
        for s in &steps {
            for (row, constant) in &s.half_planes {
                let mut full = DVector::zeros(total);
                full.rows_mut(0, n).copy_from(row);
                qp.add_ge(full, *constant)?;
            }
            if s.near.is_empty() {
                continue;
            }
            let (lam, eta, nu) = (offset, offset + 1, offset + 2);
            let num_c = s.near.len() + usize::from(s.has_far);
            let c0 = offset + 3;
            offset += 3 + num_c;
            let mut budget = DVector::zeros(total);
            budget[lam] = -2.0 * self.p.ambiguity.radius();
            budget[eta] = -1.0;
            budget[nu] = -1.0;
            for (i, (row, constant, prob)) in s.near.iter().enumerate() {
                let c = c0 + i;
                // β c + β ν + η − f(u) ≥ 0
                let mut full = DVector::zeros(total);
                full.rows_mut(0, n).copy_from(row);
                full[c] = beta;
                full[nu] = beta;
                full[eta] = 1.0;
                qp.add_ge(full, *constant)?;
                budget[c] = -prob;
            }
            if s.has_far {
                budget[c0 + s.near.len()] = -s.far_prob;
            }
            for i in 0..num_c {
                let c = c0 + i;
                let mut nonneg = DVector::zeros(total);
                nonneg[c] = beta;
                nonneg[nu] = beta;
                qp.add_ge(nonneg, 0.0)?;
                let mut upper = DVector::zeros(total);
                upper[lam] = 1.0;
                upper[c] = -1.0;
                qp.add_ge(upper.clone(), 0.0)?;
                upper[c] = 1.0;
                qp.add_ge(upper, 0.0)?;
            }
            let mut eta_row = DVector::zeros(total);
            eta_row[eta] = 1.0;
            qp.add_ge(eta_row, 0.0)?;
            qp.add_ge(budget, -scenario.risk.delta)?;
        }
        let sol = solve_qp(&qp)?;
        Ok((sol.status == QpStatus::Optimal).then(|| sol.z.rows(0, n).into_owned()))
    }

    fn verify(&self, plan: &Plan) -> Result<Option<f64>> {
        let p = self.p;
        Ok(match check_plan(p.scenario, p.ambiguity, p.terminal, &p.x0, plan)? {
            PlanCheck::Feasible { objective } => Some(objective),
            PlanCheck::Infeasible(reason) => {
                trace!("candidate plan rejected: {reason}");
                None
            }
        })
    }

    /// Sequential convex restriction starting from the faces at `freeze`.
    fn restriction_rounds(
        &self,
        cand: &TerminalCandidate,
        eq_rhs: &DVector<f64>,
        freeze: &[State],
    ) -> Result<Option<(Plan, f64)>> {
        let mut best: Option<(Plan, f64)> = None;
        let mut point = freeze.to_vec();
        for _ in 0..MAX_RESTRICTION_ROUNDS {
            let Some(u) = self.solve_restricted(eq_rhs, &point)? else {
                break;
            };
            let plan = self.plan_from_inputs(&u, &cand.state)?;
            let Some(value) = self.verify(&plan)? else {
                break;
            };
            let improved = best
                .as_ref()
                .is_none_or(|(_, b)| value < b - 1e-10 * (1.0 + b.abs()));
            let unchanged = plan.states == point;
            point = plan.states.clone();
            if best.as_ref().is_none_or(|(_, b)| value < *b) {
                best = Some((plan, value));
            }
            if !improved || unchanged {
                break;
            }
        }
        Ok(best)
    }

    fn solve_candidate(
        &self,
        cand: &TerminalCandidate,
        incumbent: f64,
        warm: &[(Plan, f64)],
    ) -> Result<Option<(Plan, f64)>> {
        let Some(eq_rhs) = self.terminal_equality(&cand.state) else {
            return Ok(None);
        };
        let Some(u) = self.solve_box_only(&eq_rhs)? else {
            return Ok(None);
        };
        let relaxed = self.plan_from_inputs(&u, &cand.state)?;
        if let Some(value) = self.verify(&relaxed)? {
            return Ok(Some((relaxed, value)));
        }
        let relaxed_value = plan_cost(self.p.scenario, &relaxed, self.p.terminal);
        if relaxed_value >= incumbent {
            return Ok(None);
        }
        let key = crate::safeset::state_key(&cand.state);
        let same_terminal = warm
            .iter()
            .find(|(plan, _)| crate::safeset::state_key(plan.terminal()) == key);
        let mut best: Option<(Plan, f64)> = None;
        let mut seeds: Vec<&[State]> = Vec::new();
        if let Some((plan, _)) = same_terminal {
            seeds.push(&plan.states);
        }
        seeds.push(&relaxed.states);
        for seed in seeds {
            if let Some((plan, value)) = self.restriction_rounds(cand, &eq_rhs, seed)? {
                if best.as_ref().is_none_or(|(_, b)| value < *b) {
                    best = Some((plan, value));
                }
            }
        }
        if best.is_none() {
            if let Some((plan, _)) = warm.first() {
                best = self.restriction_rounds(cand, &eq_rhs, &plan.states)?;
            }
        }
        Ok(best)
    }
}

/// Solves the finite-horizon problem. `warm` plans are verified and, when
/// feasible, serve both as incumbents and as linearization points; a feasible
/// warm plan is returned unless a strictly cheaper solution is found.
pub fn solve_fhp(p: &FiniteHorizonProblem, cond: &Condensed, warm: &[Plan]) -> Result<FhpSolution> {
    check_dim("initial state", p.scenario.state_dim(), p.x0.len())?;
    if cond.horizon() != p.horizon {
        return Err(Error::Parameter("condensed model built for another horizon".into()));
    }
    if p.terminal.is_empty() {
        return Err(Error::Infeasible {
            state: p.x0.iter().copied().collect(),
            diagnostic: "empty terminal set".into(),
        });
    }
    let ctx = SolveContext::new(p, cond);
    let mut verified: Vec<(Plan, f64)> = Vec::new();
    for plan in warm {
        if plan.horizon() != p.horizon {
            continue;
        }
        if let PlanCheck::Feasible { objective } =
            check_plan(p.scenario, p.ambiguity, p.terminal, &p.x0, plan)?
        {
            verified.push((plan.clone(), objective));
        }
    }
    verified.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut incumbent: Option<(Plan, f64)> = verified.first().cloned();

    let mut bounds: Vec<(f64, usize)> = p
        .terminal
        .candidates()
        .iter()
        .enumerate()
        .map(|(i, c)| (ctx.lower_bound(c), i))
        .filter(|(lb, _)| lb.is_finite())
        .collect();
    bounds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if let Some(cap) = p.candidate_cap {
        bounds.truncate(cap);
    }

    let mut solved = 0;
    if !ctx.boxes_impossible {
        for &(lb, i) in &bounds {
            let current = incumbent.as_ref().map_or(f64::INFINITY, |(_, v)| *v);
            if lb >= current - 1e-12 * (1.0 + current.abs()) {
                break;
            }
            let cand = &p.terminal.candidates()[i];
            solved += 1;
            if let Some((plan, value)) = ctx.solve_candidate(cand, current, &verified)? {
                if value < current {
                    incumbent = Some((plan, value));
                }
            }
        }
    }
    debug!(
        "fhp at {:?}: {} candidates, {} solved, {} warm plans",
        p.x0.as_slice(),
        bounds.len(),
        solved,
        verified.len()
    );

    match incumbent {
        Some((plan, objective)) => {
            let terminal = p
                .terminal
                .lookup(plan.terminal())
                .expect("verified plans end in the safe set")
                .clone();
            Ok(FhpSolution {
                plan,
                objective,
                terminal,
                candidates_solved: solved,
            })
        }
        None => Err(Error::Infeasible {
            state: p.x0.iter().copied().collect(),
            diagnostic: infeasibility_diagnostic(&ctx, &bounds)?,
        }),
    }
}

fn infeasibility_diagnostic(ctx: &SolveContext, bounds: &[(f64, usize)]) -> Result<String> {
    if ctx.boxes_impossible {
        return Ok("state boxes cannot be met from this state".into());
    }
    // smallest worst-case CVaR excess among box-feasible relaxed plans
    let p = ctx.p;
    let mut nearest: Option<f64> = None;
    let mut box_feasible = 0;
    for &(_, i) in bounds.iter().take(50) {
        let cand = &p.terminal.candidates()[i];
        let Some(eq_rhs) = ctx.terminal_equality(&cand.state) else { continue };
        let Some(u) = ctx.solve_box_only(&eq_rhs)? else { continue };
        box_feasible += 1;
        let plan = ctx.plan_from_inputs(&u, &cand.state)?;
        let mut excess = f64::NEG_INFINITY;
        for x in &plan.states[..plan.horizon()] {
            let v = worst_case_cvar_dual(&p.scenario.risk_values(x), p.ambiguity, p.scenario.risk.beta)?;
            excess = excess.max(v - p.scenario.risk.delta);
        }
        nearest = Some(nearest.map_or(excess, |n: f64| n.min(excess)));
    }
    Ok(format!(
        "{} candidates with reachable terminal, {box_feasible} of the first 50 box-feasible; \
         smallest worst-case CVaR excess without the risk constraint: {}",
        bounds.len(),
        nearest.map_or("n/a".to_string(), |e| format!("{e:.3e}"))
    ))
}

/// The plan of the previous step shifted by one, extended with the stored
/// successor of its terminal entry.
pub fn shifted_plan(scenario: &Scenario, ss: &SampledSafeSet, previous: &FhpSolution) -> Result<Plan> {
    let plan = &previous.plan;
    let k = plan.horizon();
    let last = plan.terminal();
    let next = ss
        .entry(previous.terminal.iter, previous.terminal.time + 1)
        .map_or_else(|| scenario.target().clone(), |e| e.state.clone());
    let (u_next, _) = scenario.dynamics.input_between(last, &next)?;
    let mut states = plan.states[1..].to_vec();
    states.push(next);
    let mut inputs = plan.inputs[1..k].to_vec();
    inputs.push(u_next);
    Ok(Plan { states, inputs })
}

/// First `K` steps of every stored trajectory, all of which start at `start`.
/// Trajectories shorter than `K` are padded with the target at rest.
pub fn stored_prefixes(scenario: &Scenario, ss: &SampledSafeSet, start: &State, horizon: usize) -> Vec<Plan> {
    let mut plans = Vec::new();
    for iter in ss.live_iters() {
        let entries = ss.trajectory(iter).expect("live iteration");
        let mut states = vec![start.clone()];
        for k in 1..=horizon {
            let x = entries
                .get(k - 1)
                .map_or_else(|| scenario.target().clone(), |e| e.state.clone());
            states.push(x);
        }
        let inputs: Result<Vec<Input>> = states
            .windows(2)
            .map(|w| scenario.dynamics.input_between(&w[0], &w[1]).map(|(u, _)| u))
            .collect();
        if let Ok(inputs) = inputs {
            plans.push(Plan { states, inputs });
        }
    }
    plans
}

/// Realized closed-loop run of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrajectory {
    /// `x₀ … x_T`; `x₀` is the start and `x_T` the target.
    pub states: Vec<State>,
    /// `u₀ … u_{T−1}`.
    pub inputs: Vec<Input>,
    /// `r(x_t, u_t)` for `t < T`.
    pub stage_costs: Vec<f64>,
    /// Support index of the obstacle offset observed at `t = 1 … T`.
    pub samples: Vec<usize>,
    /// Whether the realized obstacle at `t = 1 … T` contains the robot.
    pub collisions: Vec<bool>,
    /// Optimal value of each finite-horizon solve, at `t = 0, 1, …`.
    pub objective_values: Vec<f64>,
    /// Whether the shifted previous plan was feasible, for solves at `t ≥ 1`.
    pub shift_feasible: Vec<bool>,
}

impl ClosedLoopTrajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }

    pub fn collided(&self) -> bool {
        self.collisions.iter().any(|c| *c)
    }
}

/// Per-step decrease `J_{t+1} ≤ J_t − r(x_t, u_t) + tol` over consecutive solves.
pub fn lyapunov_check(objective_values: &[f64], stage_costs: &[f64], tol: f64) -> bool {
    objective_values
        .windows(2)
        .zip(stage_costs)
        .all(|(j, r)| j[1] <= j[0] - r + tol)
}

/// Runs the receding-horizon loop from the scenario start until the state
/// is within `eps_term` of the target. The last plan is then executed to its
/// terminal state and the stored trajectory through that state is followed
/// to the target, so the run ends exactly at the target. One obstacle offset
/// is drawn from the true distribution per time step.
pub fn dr_mpc<R: Rng + ?Sized>(
    scenario: &Scenario,
    ss: &SampledSafeSet,
    ambiguity: &AmbiguitySet,
    settings: &MpcSettings,
    rng: &mut R,
) -> Result<ClosedLoopTrajectory> {
    settings.validate()?;
    let cond = Condensed::new(scenario, settings.horizon)?;
    let terminal = TerminalSet::new(ss);
    let target = scenario.target().clone();
    let mut traj = ClosedLoopTrajectory {
        states: vec![scenario.start.clone()],
        inputs: Vec::new(),
        stage_costs: Vec::new(),
        samples: Vec::new(),
        collisions: Vec::new(),
        objective_values: Vec::new(),
        shift_feasible: Vec::new(),
    };
    let mut previous: Option<FhpSolution> = None;

    let mut push_step = |traj: &mut ClosedLoopTrajectory, rng: &mut R, u: Input, next: State| {
        let x = traj.states.last().expect("nonempty");
        traj.stage_costs.push(scenario.stage_cost(x, &u));
        let w = sample(&scenario.true_distribution, rng, 1)[0];
        traj.collisions
            .push(scenario.obstacle.collides(&next, scenario.support.points()[w]));
        traj.samples.push(w);
        traj.inputs.push(u);
        traj.states.push(next);
    };

    loop {
        let x = traj.states.last().expect("nonempty").clone();
        if x == target {
            return Ok(traj);
        }
        if traj.len() >= settings.max_steps {
            let tail = traj.objective_values.len().saturating_sub(5);
            return Err(Error::NonConvergence {
                max_steps: settings.max_steps,
                last_costs: traj.objective_values[tail..].to_vec(),
            });
        }
        let warm = match &previous {
            Some(prev) => vec![shifted_plan(scenario, ss, prev)?],
            None => stored_prefixes(scenario, ss, &x, settings.horizon),
        };
        let problem = FiniteHorizonProblem {
            scenario,
            x0: x.clone(),
            horizon: settings.horizon,
            terminal: &terminal,
            ambiguity,
            candidate_cap: settings.candidate_cap,
        };
        if previous.is_some() {
            let ok = check_plan(scenario, ambiguity, &terminal, &x, &warm[0])?.is_feasible();
            traj.shift_feasible.push(ok);
        }
        let sol = solve_fhp(&problem, &cond, &warm)?;
        traj.objective_values.push(sol.objective);

        if (&x - &target).norm() <= settings.eps_term {
            complete(&mut traj, &sol, ss, scenario, rng, &mut push_step)?;
            return Ok(traj);
        }
        let u = sol.plan.inputs[0].clone();
        let next = scenario.dynamics.step(&x, &u)?;
        push_step(&mut traj, rng, u, next);
        previous = Some(sol);
    }
}

fn complete<R: Rng + ?Sized>(
    traj: &mut ClosedLoopTrajectory,
    sol: &FhpSolution,
    ss: &SampledSafeSet,
    scenario: &Scenario,
    rng: &mut R,
    push_step: &mut impl FnMut(&mut ClosedLoopTrajectory, &mut R, Input, State),
) -> Result<()> {
    for (u, next) in sol.plan.inputs.iter().zip(&sol.plan.states[1..]) {
        push_step(traj, rng, u.clone(), next.clone());
    }
    let mut time = sol.terminal.time + 1;
    while let Some(entry) = ss.entry(sol.terminal.iter, time) {
        let x = traj.states.last().expect("nonempty");
        let (u, residual) = scenario.dynamics.input_between(x, &entry.state)?;
        if residual > PLAN_TOL {
            return Err(Error::Trajectory(format!(
                "stored trajectory {} is not dynamically consistent at t={time}",
                sol.terminal.iter
            )));
        }
        push_step(traj, rng, u, entry.state.clone());
        time += 1;
    }
    if traj.states.last() != Some(scenario.target()) {
        return Err(Error::Trajectory("stored trajectory does not end at the target".into()));
    }
    Ok(())
}
