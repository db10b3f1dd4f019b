//! Problem data: linear dynamics, quadratic stage cost, box constraints and the
//! moving square obstacle whose penetration depth is the risk variable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{DiscreteDistribution, SupportGrid};
use crate::error::{check_dim, Error, Result};
use crate::risk::RiskSpec;

pub type State = DVector<f64>;
pub type Input = DVector<f64>;

/// `x⁺ = A x + B u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Parameter(format!(
                "state matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_dim("input matrix rows", a.nrows(), b.nrows())?;
        if b.ncols() == 0 {
            return Err(Error::Parameter("input matrix has no columns".into()));
        }
        Ok(Self { a, b })
    }

    /// Planar double integrator with unit time step: state `[z, y, vz, vy]`,
    /// input `[az, ay]`.
    pub fn double_integrator() -> Self {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 1.0, 0.0,
            0.0, 1.0, 0.0, 1.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]);
        #[rustfmt::skip]
        let b = DMatrix::from_row_slice(4, 2, &[
            0.0, 0.0,
            0.0, 0.0,
            1.0, 0.0,
            0.0, 1.0,
        ]);
        Self { a, b }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &State, u: &Input) -> Result<State> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("input", self.input_dim(), u.len())?;
        Ok(&self.a * x + &self.b * u)
    }

    /// Least-squares input for the transition `x → next`, together with the
    /// residual norm `‖A x + B u − next‖`.
    pub fn input_between(&self, x: &State, next: &State) -> Result<(Input, f64)> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("state", self.state_dim(), next.len())?;
        let target = next - &self.a * x;
        let svd = self.b.clone().svd(true, true);
        let u = svd
            .solve(&target, 1e-12)
            .map_err(|e| Error::Numerical(format!("input reconstruction failed: {e}")))?;
        let residual = (&self.b * &u - target).norm();
        Ok((u, residual))
    }
}

/// `r(x, u) = (x − x_F)ᵀ Q (x − x_F) + uᵀ R u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticStageCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    target: State,
}

impl QuadraticStageCost {
    /// Requires `Q` symmetric positive semidefinite and `R` symmetric positive definite.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, target: State) -> Result<Self> {
        check_dim("state weight", target.len(), q.nrows())?;
        check_dim("state weight", target.len(), q.ncols())?;
        if !r.is_square() {
            return Err(Error::Parameter("input weight must be square".into()));
        }
        let symmetric = |m: &DMatrix<f64>| (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
        if !symmetric(&q) || !symmetric(&r) {
            return Err(Error::Parameter("cost weights must be symmetric".into()));
        }
        if q.clone().symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::Parameter("state weight must be positive semidefinite".into()));
        }
        if r.clone().symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::Parameter("input weight must be positive definite".into()));
        }
        Ok(Self { q, r, target })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn target(&self) -> &State {
        &self.target
    }

    pub fn eval(&self, x: &State, u: &Input) -> f64 {
        let e = x - &self.target;
        (e.transpose() * &self.q * &e)[0] + (u.transpose() * &self.r * u)[0]
    }
}

/// Axis-aligned box `lower ≤ v ≤ upper` with finite bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        for (lo, hi) in lower.iter().zip(upper.iter()) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Parameter(format!("invalid box interval [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol)
    }
}

/// Number of faces of the square obstacle.
pub const NUM_FACES: usize = 4;

/// Outward unit normals of the square's faces: `+z`, `−z`, `+y`, `−y`.
pub const FACE_NORMALS: [[f64; 2]; NUM_FACES] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];

/// Square obstacle whose center is `center + direction · w` for the scalar
/// uncertainty `w`. The robot position is read from two state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleModel {
    center: [f64; 2],
    direction: [f64; 2],
    half_length: f64,
    position_coords: [usize; 2],
}

impl ObstacleModel {
    pub fn new(
        center: [f64; 2],
        direction: [f64; 2],
        half_length: f64,
        position_coords: [usize; 2],
    ) -> Result<Self> {
        let norm = direction[0].hypot(direction[1]);
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!(
                "obstacle direction must have unit norm, got {norm}"
            )));
        }
        if !(half_length > 0.0 && half_length.is_finite()) {
            return Err(Error::Parameter(format!(
                "obstacle half-length must be positive, got {half_length}"
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("obstacle center must be finite".into()));
        }
        Ok(Self {
            center,
            direction,
            half_length,
            position_coords,
        })
    }

    /// Square of side 0.4 drifting along the anti-diagonal through `(2, 2)`.
    pub fn benchmark() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            center: [2.0, 2.0],
            direction: [s, -s],
            half_length: 0.2,
            position_coords: [0, 1],
        }
    }

    pub fn nominal_center(&self) -> [f64; 2] {
        self.center
    }

    pub fn direction(&self) -> [f64; 2] {
        self.direction
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn position_coords(&self) -> [usize; 2] {
        self.position_coords
    }

    pub fn position(&self, x: &State) -> [f64; 2] {
        [x[self.position_coords[0]], x[self.position_coords[1]]]
    }

    pub fn center_at(&self, w: f64) -> [f64; 2] {
        [
            self.center[0] + self.direction[0] * w,
            self.center[1] + self.direction[1] * w,
        ]
    }

    /// Signed inward distances `a − nⱼᵀ(p − o)` to each face; all positive
    /// exactly when `p` is strictly inside.
    pub fn face_values_at(&self, position: [f64; 2], w: f64) -> [f64; NUM_FACES] {
        let o = self.center_at(w);
        let d = [position[0] - o[0], position[1] - o[1]];
        FACE_NORMALS.map(|n| self.half_length - (n[0] * d[0] + n[1] * d[1]))
    }

    pub fn face_values(&self, x: &State, w: f64) -> [f64; NUM_FACES] {
        self.face_values_at(self.position(x), w)
    }

    /// Lowest-index face attaining the minimum inward distance.
    pub fn closest_face(&self, x: &State, w: f64) -> usize {
        let f = self.face_values(x, w);
        (1..NUM_FACES).fold(0, |best, j| if f[j] < f[best] { j } else { best })
    }

    /// Penetration depth: Euclidean distance from the robot position to the
    /// complement of the obstacle. Zero outside or on the boundary.
    pub fn g_eval(&self, x: &State, w: f64) -> f64 {
        let f = self.face_values(x, w);
        f.iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
    }

    pub fn risk_values(&self, x: &State, support: &SupportGrid) -> Vec<f64> {
        support.points().iter().map(|&w| self.g_eval(x, w)).collect()
    }

    /// Whether the closed obstacle square for `w` contains the robot position.
    pub fn collides(&self, x: &State, w: f64) -> bool {
        let f = self.face_values(x, w);
        f.iter().all(|v| *v >= 0.0)
    }

    /// Euclidean distance from the robot to the obstacle at offset `w`,
    /// negated penetration depth when inside.
    pub fn signed_distance(&self, x: &State, w: f64) -> f64 {
        let p = self.position(x);
        let o = self.center_at(w);
        let dz = (p[0] - o[0]).abs() - self.half_length;
        let dy = (p[1] - o[1]).abs() - self.half_length;
        if dz <= 0.0 && dy <= 0.0 {
            dz.max(dy)
        } else {
            dz.max(0.0).hypot(dy.max(0.0))
        }
    }

    /// Euclidean distance from the robot position to the nominal obstacle center.
    pub fn clearance_to_nominal(&self, x: &State) -> f64 {
        let p = self.position(x);
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }
}

/// Per-axis speed limit of the benchmark. One step then moves the robot at
/// most `0.25·√2 ≈ 0.35`, less than the obstacle side, so a trajectory
/// cannot pass through the obstacle between two consecutive states.
pub const BENCHMARK_SPEED: f64 = 0.25;

/// Everything that defines one planning task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dynamics: LinearDynamics,
    pub cost: QuadraticStageCost,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub obstacle: ObstacleModel,
    pub support: SupportGrid,
    pub true_distribution: DiscreteDistribution,
    pub start: State,
    pub risk: RiskSpec,
}

impl Scenario {
    pub fn target(&self) -> &State {
        self.cost.target()
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn stage_cost(&self, x: &State, u: &Input) -> f64 {
        self.cost.eval(x, u)
    }

    pub fn risk_values(&self, x: &State) -> Vec<f64> {
        self.obstacle.risk_values(x, &self.support)
    }

    /// Cross-checks dimensions of all parts.
    pub fn validate(&self) -> Result<()> {
        let (nx, nu) = (self.state_dim(), self.input_dim());
        check_dim("stage cost state", nx, self.cost.target().len())?;
        check_dim("input weight", nu, self.cost.r().nrows())?;
        check_dim("state box", nx, self.state_box.dim())?;
        check_dim("input box", nu, self.input_box.dim())?;
        check_dim("start state", nx, self.start.len())?;
        check_dim("true distribution", self.support.len(), self.true_distribution.len())?;
        if self.true_distribution.support() != &self.support {
            return Err(Error::SupportMismatch);
        }
        if self.obstacle.position_coords().iter().any(|&c| c >= nx) {
            return Err(Error::Parameter("obstacle position coordinate out of range".into()));
        }
        if !self.state_box.contains(&self.start, 0.0) || !self.state_box.contains(self.target(), 0.0) {
            return Err(Error::Parameter("start and target must lie in the state box".into()));
        }
        Ok(())
    }

    /// The mobile-robot benchmark: double integrator from the origin to
    /// `(5, 3)` past a square obstacle whose offset follows a
    /// beta-binomial(14, 10, 15) law on 15 evenly spaced points in `[−0.5, 0.5]`.
    pub fn benchmark() -> Self {
        let support = SupportGrid::evenly_spaced(-0.5, 1.0, 15).expect("valid grid");
        let true_distribution =
            DiscreteDistribution::beta_binomial(support.clone(), 10.0, 15.0).expect("valid shape");
        let target = DVector::from_vec(vec![5.0, 3.0, 0.0, 0.0]);
        Self {
            dynamics: LinearDynamics::double_integrator(),
            cost: QuadraticStageCost::new(
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.01, 0.01])),
                DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.01])),
                target,
            )
            .expect("valid weights"),
            state_box: BoxSet::new(
                DVector::from_vec(vec![-1.0, -1.0, -BENCHMARK_SPEED, -BENCHMARK_SPEED]),
                DVector::from_vec(vec![6.0, 6.0, BENCHMARK_SPEED, BENCHMARK_SPEED]),
            )
            .expect("valid box"),
            input_box: BoxSet::new(DVector::from_vec(vec![-1.0; 2]), DVector::from_vec(vec![1.0; 2]))
                .expect("valid box"),
            obstacle: ObstacleModel::benchmark(),
            support,
            true_distribution,
            start: DVector::zeros(4),
            risk: RiskSpec::new(0.05, 0.02).expect("valid risk spec"),
        }
    }
}
