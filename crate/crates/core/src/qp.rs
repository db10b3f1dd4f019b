//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//! minimize    ½ zᵀ H z + cᵀ z
//! subject to  e_iᵀ z = f_i,   n_jᵀ z ≥ b_j
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. The method starts
//! from the unconstrained minimizer and adds violated constraints one at a
//! time while keeping dual feasibility, so an empty step certifies primal
//! infeasibility. `H` must be positive definite.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Constraint violation (in normalized row units) treated as satisfied.
const VIOLATION_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct QpProblem {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    eq_rows: Vec<DVector<f64>>,
    eq_rhs: Vec<f64>,
    ineq_rows: Vec<DVector<f64>>,
    ineq_rhs: Vec<f64>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        if !hessian.is_square() || hessian.nrows() != linear.len() {
            return Err(Error::Dimension {
                context: "qp hessian",
                expected: linear.len(),
                actual: hessian.nrows(),
            });
        }
        Ok(Self {
            hessian,
            linear,
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
        })
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rows.len()
    }

    /// Adds `row · z = rhs`. Rows of zero norm are rejected.
    pub fn add_eq(&mut self, row: DVector<f64>, rhs: f64) -> Result<()> {
        let (row, rhs) = self.normalize(row, rhs)?;
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        Ok(())
    }

    /// Adds `row · z ≥ rhs`. Rows of zero norm are rejected.
    pub fn add_ge(&mut self, row: DVector<f64>, rhs: f64) -> Result<()> {
        let (row, rhs) = self.normalize(row, rhs)?;
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
        Ok(())
    }

    /// Adds `row · z ≤ rhs`.
    pub fn add_le(&mut self, row: DVector<f64>, rhs: f64) -> Result<()> {
        self.add_ge(-row, -rhs)
    }

    fn normalize(&self, row: DVector<f64>, rhs: f64) -> Result<(DVector<f64>, f64)> {
        if row.len() != self.num_vars() {
            return Err(Error::Dimension {
                context: "qp constraint row",
                expected: self.num_vars(),
                actual: row.len(),
            });
        }
        let norm = row.norm();
        if !(norm > 0.0 && norm.is_finite() && rhs.is_finite()) {
            return Err(Error::Numerical(format!(
                "degenerate qp constraint (row norm {norm}, rhs {rhs})"
            )));
        }
        Ok((row / norm, rhs / norm))
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// Largest violation over all constraints at `z`, in normalized units.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let eq = self
            .eq_rows
            .iter()
            .zip(&self.eq_rhs)
            .map(|(r, b)| (r.dot(z) - b).abs());
        let ineq = self
            .ineq_rows
            .iter()
            .zip(&self.ineq_rhs)
            .map(|(r, b)| (b - r.dot(z)).max(0.0));
        eq.chain(ineq).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: DVector<f64>,
    pub objective: f64,
    /// Indices of the inequality rows active at the solution.
    pub active: Vec<usize>,
    pub iterations: usize,
}

/// Cholesky-derived factors updated as constraints enter and leave.
struct Factors {
    n: usize,
    /// `J = L⁻ᵀ Q` where the first `iq` columns span the active normals.
    j: DMatrix<f64>,
    /// Upper-triangular `R` from `Jᵀ N = [R; 0]`.
    r: DMatrix<f64>,
    r_norm: f64,
    iq: usize,
}

impl Factors {
    fn d_of(&self, np: &DVector<f64>) -> DVector<f64> {
        self.j.tr_mul(np)
    }

    fn primal_step(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.n);
        for col in self.iq..self.n {
            let dc = d[col];
            if dc != 0.0 {
                z.axpy(dc, &self.j.column(col), 1.0);
            }
        }
        z
    }

    fn dual_step(&self, d: &DVector<f64>) -> Vec<f64> {
        let iq = self.iq;
        let mut r = vec![0.0; iq];
        for i in (0..iq).rev() {
            let mut sum = 0.0;
            for k in i + 1..iq {
                sum += self.r[(i, k)] * r[k];
            }
            r[i] = (d[i] - sum) / self.r[(i, i)];
        }
        r
    }

    fn add(&mut self, d: &mut DVector<f64>) -> bool {
        let n = self.n;
        let mut col = n;
        while col > self.iq + 1 {
            col -= 1;
            let (cc, ss) = (d[col - 1], d[col]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[col] = 0.0;
            let (mut cc, mut ss) = (cc / h, ss / h);
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[col - 1] = -h;
            } else {
                d[col - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, col - 1)];
                let t2 = self.j[(k, col)];
                let new = t1 * cc + t2 * ss;
                self.j[(k, col - 1)] = new;
                self.j[(k, col)] = xny * (t1 + new) - t2;
            }
        }
        self.iq += 1;
        for i in 0..self.iq {
            self.r[(i, self.iq - 1)] = d[i];
        }
        let pivot = d[self.iq - 1].abs();
        if pivot <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(pivot);
        true
    }

    /// Removes active position `qq` and restores the triangular structure.
    fn remove(&mut self, qq: usize) {
        let n = self.n;
        for i in qq..self.iq - 1 {
            for k in 0..n {
                self.r[(k, i)] = self.r[(k, i + 1)];
            }
        }
        for k in 0..self.iq {
            self.r[(k, self.iq - 1)] = 0.0;
        }
        self.iq -= 1;
        for j in qq..self.iq {
            let (cc, ss) = (self.r[(j, j)], self.r[(j + 1, j)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            let (mut cc, mut ss) = (cc / h, ss / h);
            self.r[(j + 1, j)] = 0.0;
            if cc < 0.0 {
                self.r[(j, j)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(j, j)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in j + 1..self.iq {
                let t1 = self.r[(j, k)];
                let t2 = self.r[(j + 1, k)];
                let new = t1 * cc + t2 * ss;
                self.r[(j, k)] = new;
                self.r[(j + 1, k)] = xny * (t1 + new) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, j)];
                let t2 = self.j[(k, j + 1)];
                let new = t1 * cc + t2 * ss;
                self.j[(k, j)] = new;
                self.j[(k, j + 1)] = xny * (new + t1) - t2;
            }
        }
    }
}

#[derive(Clone)]
struct Snapshot {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
    iq: usize,
    x: DVector<f64>,
    active_ids: Vec<usize>,
    u: Vec<f64>,
    is_active: Vec<bool>,
}

/// Solves the quadratic program. Infeasibility is reported through the
/// status; errors are reserved for non-positive-definite Hessians, linearly
/// dependent equalities and iteration blow-ups.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    let n = p.num_vars();
    let m = p.num_ineq();
    let chol = p
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("qp hessian is not positive definite".into()))?;
    let j = chol
        .l()
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numerical("singular cholesky factor".into()))?;
    let mut f = Factors {
        n,
        j,
        r: DMatrix::zeros(n, n),
        r_norm: 1.0,
        iq: 0,
    };
    let mut x = -chol.solve(&p.linear);
    // constraint ids: inequalities 0..m, equalities m..
    let mut active_ids: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();

    for (i, (np, rhs)) in p.eq_rows.iter().zip(&p.eq_rhs).enumerate() {
        let mut d = f.d_of(np);
        let z = f.primal_step(&d);
        let r = f.dual_step(&d);
        let zn = z.dot(np);
        let t2 = if z.norm_squared() > f64::EPSILON {
            (rhs - np.dot(&x)) / zn
        } else {
            0.0
        };
        x.axpy(t2, &z, 1.0);
        for (uk, rk) in u.iter_mut().zip(&r) {
            *uk -= t2 * rk;
        }
        u.push(t2);
        active_ids.push(m + i);
        if !f.add(&mut d) {
            return Err(Error::Numerical(
                "qp equality constraints are linearly dependent".into(),
            ));
        }
    }
    let num_eq = p.eq_rows.len();

    let mut is_active = vec![false; m];
    let mut excluded = vec![false; m];
    let mut slack = vec![0.0; m];
    let cap = 20 * (n + m) + 100;
    let mut iterations = 0;

    'outer: loop {
        iterations += 1;
        if iterations > cap {
            return Err(Error::Numerical(format!(
                "qp active-set iterations exceeded {cap}"
            )));
        }
        for i in 0..m {
            slack[i] = p.ineq_rows[i].dot(&x) - p.ineq_rhs[i];
        }
        let snapshot = Snapshot {
            j: f.j.clone(),
            r: f.r.clone(),
            r_norm: f.r_norm,
            iq: f.iq,
            x: x.clone(),
            active_ids: active_ids.clone(),
            u: u.clone(),
            is_active: is_active.clone(),
        };

        'choose: loop {
            let mut worst = -VIOLATION_TOL;
            let mut chosen = None;
            for i in 0..m {
                if !is_active[i] && !excluded[i] && slack[i] < worst {
                    worst = slack[i];
                    chosen = Some(i);
                }
            }
            let Some(ip) = chosen else {
                let active = active_ids.iter().copied().filter(|&c| c < m).collect();
                return Ok(QpSolution {
                    status: QpStatus::Optimal,
                    objective: p.objective(&x),
                    z: x,
                    active,
                    iterations,
                });
            };
            let np = &p.ineq_rows[ip];
            u.push(0.0);
            active_ids.push(ip);

            loop {
                let mut d = f.d_of(np);
                let z = f.primal_step(&d);
                let r = f.dual_step(&d);
                let mut t1 = f64::INFINITY;
                let mut leaving = None;
                for k in num_eq..f.iq {
                    if r[k] > 0.0 {
                        let ratio = u[k] / r[k];
                        if ratio < t1 {
                            t1 = ratio;
                            leaving = Some(k);
                        }
                    }
                }
                let zn = z.dot(np);
                let t2 = if z.norm_squared() > f64::EPSILON && zn > 0.0 {
                    -slack[ip] / zn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if t == f64::INFINITY {
                    return Ok(QpSolution {
                        status: QpStatus::Infeasible,
                        objective: f64::INFINITY,
                        z: x,
                        active: Vec::new(),
                        iterations,
                    });
                }
                let pending = f.iq;
                for k in 0..pending {
                    u[k] -= t * r[k];
                }
                u[pending] += t;
                if t2 == f64::INFINITY {
                    // dual step only: drop the blocking constraint and retry
                    let qq = leaving.expect("finite partial step has a blocking constraint");
                    is_active[active_ids[qq]] = false;
                    active_ids.remove(qq);
                    u.remove(qq);
                    f.remove(qq);
                    continue;
                }
                x.axpy(t, &z, 1.0);
                if t == t2 {
                    if !f.add(&mut d) {
                        excluded[ip] = true;
                        f.j = snapshot.j.clone();
                        f.r = snapshot.r.clone();
                        f.r_norm = snapshot.r_norm;
                        f.iq = snapshot.iq;
                        x = snapshot.x.clone();
                        active_ids = snapshot.active_ids.clone();
                        u = snapshot.u.clone();
                        is_active = snapshot.is_active.clone();
                        continue 'choose;
                    }
                    is_active[ip] = true;
                    continue 'outer;
                }
                let qq = leaving.expect("partial step has a blocking constraint");
                is_active[active_ids[qq]] = false;
                active_ids.remove(qq);
                u.remove(qq);
                f.remove(qq);
                slack[ip] = np.dot(&x) - p.ineq_rhs[ip];
            }
        }
    }
}
