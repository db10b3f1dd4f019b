//! Inputs shared by the criterion benchmarks under `benches/`.

use drilmpc_core::linprog::LpProblem;
use drilmpc_core::risk::AmbiguitySet;
use drilmpc_core::Scenario;

/// Dense LP with `n` variables in `[-1, 1]` and `m` inequality rows whose
/// coefficients follow a fixed trigonometric pattern.
pub fn dense_lp(n: usize, m: usize) -> LpProblem {
    let cost = (0..n).map(|j| ((j * 7 + 3) as f64).sin()).collect();
    let mut p = LpProblem::new(cost);
    for j in 0..n {
        p.set_bounds(j, -1.0, 1.0).expect("finite bounds");
    }
    for i in 0..m {
        let row = (0..n).map(|j| ((i * n + j) as f64 * 0.37).cos()).collect();
        p.add_le(row, 0.5 + (i % 3) as f64).expect("row length");
    }
    p
}

/// Ambiguity set around the benchmark's true distribution.
pub fn benchmark_ambiguity(scenario: &Scenario, radius: f64) -> AmbiguitySet {
    AmbiguitySet::new(scenario.true_distribution.clone(), radius).expect("valid radius")
}

/// Risk values of the benchmark at a state grazing the obstacle, where
/// some atoms penetrate and others do not.
pub fn grazing_risk_values(scenario: &Scenario) -> Vec<f64> {
    let mut x = scenario.start.clone();
    x[0] = 1.85;
    x[1] = 2.1;
    scenario.risk_values(&x)
}
