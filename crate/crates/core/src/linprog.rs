//! Dense two-phase simplex for small linear programs.
//!
//! Problems have the form
//!
//! ```text
//! minimize    cᵀz
//! subject to  A z ≤ b,   E z = d,   lower ≤ z ≤ upper
//! ```
//!
//! with possibly infinite bounds. Internally every variable is mapped onto
//! nonnegative columns, each row gets a slack or an artificial, and the
//! tableau is pivoted with Bland's rule. The problems in this crate are tiny
//! (tens of variables), so the tableau is kept dense.

use thiserror::Error;

/// Smallest pivot magnitude accepted in the ratio test.
pub const PIVOT_TOL: f64 = 1e-10;
const OPTIMALITY_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("row {row} has {actual} coefficients, expected {expected}")]
    RowLength {
        row: usize,
        expected: usize,
        actual: usize,
    },
    #[error("variable {var} has empty or NaN bounds [{lower}, {upper}]")]
    InvalidBounds { var: usize, lower: f64, upper: f64 },
    #[error("non-finite data in {0}")]
    NonFinite(&'static str),
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    cost: Vec<f64>,
    ineq: Vec<(Vec<f64>, f64)>,
    eq: Vec<(Vec<f64>, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LpProblem {
    /// New problem with the given cost vector; all variables default to `z ≥ 0`.
    pub fn new(cost: Vec<f64>) -> Self {
        let n = cost.len();
        Self {
            cost,
            ineq: Vec::new(),
            eq: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn inequalities(&self) -> &[(Vec<f64>, f64)] {
        &self.ineq
    }

    pub fn equalities(&self) -> &[(Vec<f64>, f64)] {
        &self.eq
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> Result<(), LpError> {
        if var >= self.num_vars() || lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(LpError::InvalidBounds { var, lower, upper });
        }
        if lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(LpError::InvalidBounds { var, lower, upper });
        }
        self.lower[var] = lower;
        self.upper[var] = upper;
        Ok(())
    }

    pub fn set_free(&mut self, var: usize) -> Result<(), LpError> {
        self.set_bounds(var, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Adds `row · z ≤ rhs`.
    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) -> Result<(), LpError> {
        self.check_row(&row, rhs, self.ineq.len())?;
        self.ineq.push((row, rhs));
        Ok(())
    }

    /// Adds `row · z ≥ rhs`, stored as `−row · z ≤ −rhs`.
    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) -> Result<(), LpError> {
        self.add_le(row.into_iter().map(|a| -a).collect(), -rhs)
    }

    /// Adds `row · z = rhs`.
    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) -> Result<(), LpError> {
        self.check_row(&row, rhs, self.eq.len())?;
        self.eq.push((row, rhs));
        Ok(())
    }

    fn check_row(&self, row: &[f64], rhs: f64, index: usize) -> Result<(), LpError> {
        if row.len() != self.num_vars() {
            return Err(LpError::RowLength {
                row: index,
                expected: self.num_vars(),
                actual: row.len(),
            });
        }
        if !rhs.is_finite() || row.iter().any(|a| !a.is_finite()) {
            return Err(LpError::NonFinite("constraint row"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of [`lp_solve`]. Primal and dual vectors are empty unless optimal.
///
/// Duals follow the convention `c = Aᵀ y_ineq + Eᵀ y_eq + r` with `y_ineq ≤ 0`,
/// where `r` holds the reduced costs on the variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub ineq_duals: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub pivots: usize,
}

impl LpSolution {
    fn non_optimal(status: LpStatus, pivots: usize) -> Self {
        Self {
            status,
            x: Vec::new(),
            objective: match status {
                LpStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            ineq_duals: Vec::new(),
            eq_duals: Vec::new(),
            pivots,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// z = offset + y
    Shift { col: usize, offset: f64 },
    /// z = offset − y
    Mirror { col: usize, offset: f64 },
    /// z = y⁺ − y⁻
    Split { pos: usize, neg: usize },
}

#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    Ineq(usize),
    Eq(usize),
    Upper,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = std::mem::take(&mut self.rows[r]);
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[col] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.obj[col] = 0.0;
        }
        self.rows[r] = pivot_row;
        self.basis[r] = col;
        self.pivots += 1;
    }

    /// Loads `cost` into the objective row and prices out the basic columns.
    fn set_objective(&mut self, cost: &[f64]) {
        self.obj = cost.to_vec();
        self.obj.push(0.0);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = self.obj[b];
            if cb != 0.0 {
                for (v, rv) in self.obj.iter_mut().zip(&self.rows[i]) {
                    *v -= cb * rv;
                }
            }
        }
    }

    /// Bland's rule: lowest-index improving column, lowest-index leaving variable on ties.
    fn run(&mut self, allowed: &[bool]) -> Result<bool, LpError> {
        loop {
            let entering = (0..self.width).find(|&j| allowed[j] && self.obj[j] < -OPTIMALITY_TOL);
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * br.abs().max(1.0);
                            if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Ok(false);
            };
            if self.pivots >= MAX_PIVOTS {
                return Err(LpError::IterationLimit(MAX_PIVOTS));
            }
            self.pivot(r, col);
        }
    }
}

/// Solves the linear program to an optimal basic solution, or certifies
/// infeasibility or unboundedness.
pub fn lp_solve(problem: &LpProblem) -> Result<LpSolution, LpError> {
    let n = problem.num_vars();
    if problem.cost.iter().any(|c| !c.is_finite()) {
        return Err(LpError::NonFinite("cost vector"));
    }

    // map variables onto nonnegative columns
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (problem.lower[j], problem.upper[j]);
        if lo.is_finite() {
            maps.push(VarMap::Shift { col: ncols, offset: lo });
            if hi.is_finite() {
                upper_rows.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Mirror { col: ncols, offset: hi });
            ncols += 1;
        } else {
            maps.push(VarMap::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }
    let structural = ncols;

    let mut std_cost = vec![0.0; structural];
    let mut cost_offset = 0.0;
    for (j, m) in maps.iter().enumerate() {
        let c = problem.cost[j];
        match *m {
            VarMap::Shift { col, offset } => {
                std_cost[col] += c;
                cost_offset += c * offset;
            }
            VarMap::Mirror { col, offset } => {
                std_cost[col] -= c;
                cost_offset += c * offset;
            }
            VarMap::Split { pos, neg } => {
                std_cost[pos] += c;
                std_cost[neg] -= c;
            }
        }
    }

    let transform_row = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; structural];
        let mut b = rhs;
        for (j, m) in maps.iter().enumerate() {
            let a = row[j];
            if a == 0.0 {
                continue;
            }
            match *m {
                VarMap::Shift { col, offset } => {
                    out[col] += a;
                    b -= a * offset;
                }
                VarMap::Mirror { col, offset } => {
                    out[col] -= a;
                    b -= a * offset;
                }
                VarMap::Split { pos, neg } => {
                    out[pos] += a;
                    out[neg] -= a;
                }
            }
        }
        (out, b)
    };

    // (coefficients, rhs, has slack, origin)
    let mut std_rows: Vec<(Vec<f64>, f64, bool, RowOrigin)> = Vec::new();
    for (i, (row, rhs)) in problem.ineq.iter().enumerate() {
        let (r, b) = transform_row(row, *rhs);
        std_rows.push((r, b, true, RowOrigin::Ineq(i)));
    }
    for &(col, width) in &upper_rows {
        let mut r = vec![0.0; structural];
        r[col] = 1.0;
        std_rows.push((r, width, true, RowOrigin::Upper));
    }
    for (i, (row, rhs)) in problem.eq.iter().enumerate() {
        let (r, b) = transform_row(row, *rhs);
        std_rows.push((r, b, false, RowOrigin::Eq(i)));
    }

    let m = std_rows.len();
    let num_slacks = std_rows.iter().filter(|r| r.2).count();
    // one artificial per row that lacks a +1 slack after sign normalization
    let mut flipped = vec![false; m];
    let mut needs_art = vec![false; m];
    for (i, (_, b, has_slack, _)) in std_rows.iter().enumerate() {
        flipped[i] = *b < 0.0;
        needs_art[i] = !has_slack || flipped[i];
    }
    let num_art = needs_art.iter().filter(|a| **a).count();
    let width = structural + num_slacks + num_art;

    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut init_col = Vec::with_capacity(m);
    let mut slack_idx = structural;
    let mut art_idx = structural + num_slacks;
    for (i, (coeffs, b, has_slack, _)) in std_rows.iter().enumerate() {
        let sign = if flipped[i] { -1.0 } else { 1.0 };
        let mut row = vec![0.0; width + 1];
        for (v, a) in row.iter_mut().zip(coeffs) {
            *v = sign * a;
        }
        let mut slack_col = None;
        if *has_slack {
            row[slack_idx] = sign;
            slack_col = Some(slack_idx);
            slack_idx += 1;
        }
        if needs_art[i] {
            row[art_idx] = 1.0;
            basis.push(art_idx);
            init_col.push(art_idx);
            art_idx += 1;
        } else {
            let s = slack_col.expect("row without artificial has a slack");
            basis.push(s);
            init_col.push(s);
        }
        row[width] = sign * b;
        rows.push(row);
    }

    let mut tab = Tableau {
        rows,
        obj: Vec::new(),
        basis,
        width,
        pivots: 0,
    };
    let is_art = |j: usize| j >= structural + num_slacks;

    if num_art > 0 {
        let mut phase1 = vec![0.0; width];
        for c in phase1.iter_mut().skip(structural + num_slacks) {
            *c = 1.0;
        }
        tab.set_objective(&phase1);
        let all = vec![true; width];
        tab.run(&all)?;
        let infeasibility = -tab.obj[width];
        let scale = 1.0 + tab.rows.iter().map(|r| r[width].abs()).fold(0.0, f64::max);
        if infeasibility > 1e-9 * scale {
            return Ok(LpSolution::non_optimal(LpStatus::Infeasible, tab.pivots));
        }
        // drive zero-level artificials out of the basis where possible
        for i in 0..m {
            if is_art(tab.basis[i]) {
                let col = (0..structural + num_slacks).find(|&j| tab.rows[i][j].abs() > 1e-9);
                if let Some(col) = col {
                    tab.pivot(i, col);
                }
            }
        }
    }

    let mut phase2 = std_cost.clone();
    phase2.resize(width, 0.0);
    tab.set_objective(&phase2);
    let allowed: Vec<bool> = (0..width).map(|j| !is_art(j)).collect();
    if !tab.run(&allowed)? {
        return Ok(LpSolution::non_optimal(LpStatus::Unbounded, tab.pivots));
    }

    let mut y = vec![0.0; width];
    for (i, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(i).max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shift { col, offset } => offset + y[col],
            VarMap::Mirror { col, offset } => offset - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let objective: f64 = problem.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    debug_assert!({
        let std_obj: f64 = std_cost.iter().zip(&y).map(|(c, v)| c * v).sum::<f64>() + cost_offset;
        (std_obj - objective).abs() <= 1e-6 * (1.0 + objective.abs())
    });

    // row multipliers: reduced cost of the initial basic column is c_j − y_i
    let mut ineq_duals = vec![0.0; problem.ineq.len()];
    let mut eq_duals = vec![0.0; problem.eq.len()];
    for i in 0..m {
        let col = init_col[i];
        let mut dual = phase2[col] - tab.obj[col];
        if flipped[i] {
            dual = -dual;
        }
        match std_rows[i].3 {
            RowOrigin::Ineq(k) => ineq_duals[k] = dual,
            RowOrigin::Eq(k) => eq_duals[k] = dual,
            RowOrigin::Upper => {}
        }
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        ineq_duals,
        eq_duals,
        pivots: tab.pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// All constraints of `p` as rows `a·z ≤ b` (bounds included), plus equalities.
    fn constraint_rows(p: &LpProblem) -> (Vec<(Vec<f64>, f64)>, Vec<(Vec<f64>, f64)>) {
        let n = p.num_vars();
        let mut le = p.inequalities().to_vec();
        for j in 0..n {
            let (lo, hi) = p.bounds(j);
            let mut e = vec![0.0; n];
            if lo.is_finite() {
                e[j] = -1.0;
                le.push((e.clone(), -lo));
            }
            if hi.is_finite() {
                e[j] = 1.0;
                le.push((e, hi));
            }
        }
        (le, p.equalities().to_vec())
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Minimum of the objective over all basic feasible points.
    fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
        let n = p.num_vars();
        let (le, eq) = constraint_rows(p);
        let need = n - eq.len();
        let mut best: Option<f64> = None;
        let m = le.len();
        let mut choice: Vec<usize> = (0..need).collect();
        loop {
            let mut mat = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for (r, (row, b)) in eq.iter().chain(choice.iter().map(|&i| &le[i])).enumerate() {
                for j in 0..n {
                    mat[(r, j)] = row[j];
                }
                rhs[r] = *b;
            }
            if let Some(z) = mat.lu().solve(&rhs) {
                let z: Vec<f64> = z.iter().copied().collect();
                let feasible = le.iter().all(|(row, b)| dot(row, &z) <= b + 1e-9)
                    && eq.iter().all(|(row, b)| (dot(row, &z) - b).abs() <= 1e-9);
                if feasible {
                    let v = dot(p.cost(), &z);
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
            // next combination
            let mut i = need;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if choice[i] < m - need + i {
                    choice[i] += 1;
                    for k in i + 1..need {
                        choice[k] = choice[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn dual_objective(p: &LpProblem, s: &LpSolution) -> f64 {
        let n = p.num_vars();
        let mut reduced = p.cost().to_vec();
        let mut value = 0.0;
        for ((row, b), y) in p.inequalities().iter().zip(&s.ineq_duals) {
            value += b * y;
            for j in 0..n {
                reduced[j] -= row[j] * y;
            }
        }
        for ((row, b), y) in p.equalities().iter().zip(&s.eq_duals) {
            value += b * y;
            for j in 0..n {
                reduced[j] -= row[j] * y;
            }
        }
        for (j, r) in reduced.iter().enumerate() {
            let (lo, hi) = p.bounds(j);
            if *r > 1e-9 {
                value += r * lo;
            } else if *r < -1e-9 {
                value += r * hi;
            }
        }
        value
    }

    fn random_lp(rng: &mut ChaCha8Rng) -> LpProblem {
        let n = rng.random_range(1..=6);
        let cost = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut p = LpProblem::new(cost);
        let anchor: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        for j in 0..n {
            match rng.random_range(0..4) {
                0 => p.set_bounds(j, -3.0, 3.0).unwrap(),
                1 => p.set_bounds(j, -3.0, f64::INFINITY).unwrap(),
                2 => p.set_bounds(j, f64::NEG_INFINITY, 3.0).unwrap(),
                _ => p.set_bounds(j, -4.0, 2.5).unwrap(),
            }
        }
        let m_ineq = rng.random_range(0..=6);
        for _ in 0..m_ineq {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let slack = rng.random_range(0.0..2.0);
            let b = dot(&row, &anchor) + slack;
            p.add_le(row, b).unwrap();
        }
        if n > 1 && rng.random_bool(0.4) {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b = dot(&row, &anchor);
            p.add_eq(row, b).unwrap();
        }
        // keep the region bounded so vertex enumeration sees the optimum
        let mut box_row = vec![0.0; n];
        for (j, a) in box_row.iter_mut().enumerate() {
            *a = if anchor[j] >= 0.0 { 1.0 } else { -1.0 };
        }
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            p.add_le(e.clone(), 6.0).unwrap();
            e[j] = -1.0;
            p.add_le(e, 6.0).unwrap();
        }
        p
    }

    fn assert_feasible(p: &LpProblem, x: &[f64]) {
        for (row, b) in p.inequalities() {
            assert!(dot(row, x) <= b + 1e-8);
        }
        for (row, b) in p.equalities() {
            assert!((dot(row, x) - b).abs() <= 1e-8);
        }
        for (j, v) in x.iter().enumerate() {
            let (lo, hi) = p.bounds(j);
            assert!(*v >= lo - 1e-8 && *v <= hi + 1e-8);
        }
    }

    #[test]
    fn single_lower_bound() {
        let mut p = LpProblem::new(vec![1.0]);
        p.set_free(0).unwrap();
        p.add_ge(vec![1.0], 3.0).unwrap();
        let s = lp_solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-12);
        assert!((s.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_vertex() {
        let mut p = LpProblem::new(vec![1.0, 2.0, 0.0]);
        p.add_eq(vec![1.0; 3], 1.0).unwrap();
        let s = lp_solve(&p).unwrap();
        assert!(s.objective.abs() < 1e-12);
        assert!((s.x[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut p = LpProblem::new(vec![1.0]);
        p.add_le(vec![1.0], -1.0).unwrap();
        assert_eq!(lp_solve(&p).unwrap().status, LpStatus::Infeasible);

        let mut p = LpProblem::new(vec![-1.0, 0.0]);
        p.add_le(vec![-1.0, 1.0], 1.0).unwrap();
        assert_eq!(lp_solve(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn construction_errors() {
        let mut p = LpProblem::new(vec![1.0, 1.0]);
        assert!(matches!(
            p.add_le(vec![1.0], 1.0),
            Err(LpError::RowLength { .. })
        ));
        assert!(p.set_bounds(0, 2.0, 1.0).is_err());
        assert!(p.add_eq(vec![f64::NAN, 1.0], 1.0).is_err());
    }

    #[test]
    fn degenerate_problem_terminates() {
        // classic cycling example under the largest-coefficient rule
        let mut p = LpProblem::new(vec![-0.75, 150.0, -0.02, 6.0]);
        p.add_le(vec![0.25, -60.0, -0.04, 9.0], 0.0).unwrap();
        p.add_le(vec![0.5, -90.0, -0.02, 3.0], 0.0).unwrap();
        p.add_le(vec![0.0, 0.0, 1.0, 0.0], 1.0).unwrap();
        let s = lp_solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 0.05).abs() < 1e-10);
    }

    #[test]
    fn matches_vertex_enumeration_and_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let p = random_lp(&mut rng);
            let s = lp_solve(&p).unwrap();
            let oracle = vertex_enumeration(&p).expect("anchor point is feasible");
            assert_eq!(s.status, LpStatus::Optimal);
            assert!((s.objective - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()));
            assert_feasible(&p, &s.x);
            assert!(s.ineq_duals.iter().all(|y| *y <= 1e-9));
            let d = dual_objective(&p, &s);
            assert!((d - s.objective).abs() <= 1e-7, "{d} vs {}", s.objective);
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_lp(&mut rng);
        assert_eq!(lp_solve(&p).unwrap(), lp_solve(&p).unwrap());
    }
}
