//! Conditional value-at-risk and its worst case over a total-variation ball.
//!
//! Three routes to the worst-case value are provided and cross-checked in the
//! tests: the dual linear program ([`worst_case_cvar_dual`]), the primal
//! linear program over the ball ([`worst_case_cvar_primal`]) and the
//! mass-transport construction ([`worst_case_cvar_closed_form`]).

use serde::{Deserialize, Serialize};

use crate::distributions::DiscreteDistribution;
use crate::error::{check_dim, Error, Result};
use crate::linprog::{lp_solve, LpProblem};

/// Slack allowed when comparing a risk value against its tolerance.
pub const TOL_FEAS: f64 = 1e-6;

/// Smallest tail level accepted anywhere in the crate.
pub const MIN_BETA: f64 = 1e-6;

/// Total-variation ball `{μ : ½‖μ − center‖₁ ≤ radius}` on the center's support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySet {
    center: DiscreteDistribution,
    radius: f64,
    /// Nominal coverage level; reported but never used in computations.
    confidence: Option<f64>,
}

impl AmbiguitySet {
    pub fn new(center: DiscreteDistribution, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::Parameter(format!(
                "ambiguity radius must be finite and nonnegative, got {radius}"
            )));
        }
        Ok(Self {
            center,
            radius,
            confidence: None,
        })
    }

    pub fn with_confidence(mut self, confidence: f64) -> Result<Self> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::Parameter(format!(
                "confidence must lie in (0, 1), got {confidence}"
            )));
        }
        self.confidence = Some(confidence);
        Ok(self)
    }

    pub fn center(&self) -> &DiscreteDistribution {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn confidence(&self) -> Option<f64> {
        self.confidence
    }

    /// Whether `dist` lies in the ball (within `1e-12`).
    pub fn contains(&self, dist: &DiscreteDistribution) -> Result<bool> {
        let d = crate::distributions::tv_distance(&self.center, dist)?;
        Ok(d <= self.radius + 1e-12)
    }
}

/// Tail level `beta` and tolerance `delta` of the constraint `sup CVaR ≤ delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub beta: f64,
    pub delta: f64,
}

impl RiskSpec {
    pub fn new(beta: f64, delta: f64) -> Result<Self> {
        check_beta(beta)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Parameter(format!("risk tolerance must be positive, got {delta}")));
        }
        Ok(Self { beta, delta })
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if (MIN_BETA..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("beta must lie in [{MIN_BETA}, 1], got {beta}")))
    }
}

fn check_values(values: &[f64], dist: &DiscreteDistribution) -> Result<()> {
    check_dim("risk values", dist.len(), values.len())?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("risk values must be finite".into()));
    }
    Ok(())
}

/// Objective `t + E[Z − t]₊ / β` whose infimum over `t` is the CVaR.
pub fn cvar_objective(values: &[f64], probs: &[f64], beta: f64, t: f64) -> f64 {
    let tail: f64 = values
        .iter()
        .zip(probs)
        .map(|(v, p)| p * (v - t).max(0.0))
        .sum();
    t + tail / beta
}

/// CVaR at tail level `beta` of the random variable taking `values[i]` with
/// probability `dist.probs()[i]`.
pub fn cvar(values: &[f64], dist: &DiscreteDistribution, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_values(values, dist)?;
    Ok(cvar_unchecked(values, dist.probs(), beta))
}

pub(crate) fn cvar_unchecked(values: &[f64], probs: &[f64], beta: f64) -> f64 {
    if beta == 1.0 {
        return values.iter().zip(probs).map(|(v, p)| v * p).sum();
    }
    values
        .iter()
        .map(|&t| cvar_objective(values, probs, beta, t))
        .fold(f64::INFINITY, f64::min)
}

/// Left `(1 − beta)`-quantile, `inf{ζ : P(Z ≤ ζ) ≥ 1 − beta}`, taken over atoms
/// of positive probability.
pub fn var(values: &[f64], dist: &DiscreteDistribution, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_values(values, dist)?;
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| dist.probs()[i] > 0.0).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let level = 1.0 - beta;
    let mut cumulative = 0.0;
    for &i in &order {
        cumulative += dist.probs()[i];
        if cumulative >= level - 1e-12 {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().expect("a distribution has a positive atom")])
}

/// Collapses atoms with identical values; worst-case CVaR only depends on the
/// distribution of the values, so this leaves every quantity here unchanged.
/// The output is sorted by value.
pub fn merge_atoms(values: &[f64], probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut merged_v: Vec<f64> = Vec::with_capacity(values.len());
    let mut merged_p: Vec<f64> = Vec::with_capacity(values.len());
    for i in order {
        match merged_v.last() {
            Some(&last) if last == values[i] => *merged_p.last_mut().unwrap() += probs[i],
            _ => {
                merged_v.push(values[i]);
                merged_p.push(probs[i]);
            }
        }
    }
    (merged_v, merged_p)
}

/// Worst-case CVaR via the dual linear program
///
/// ```text
/// min  2θλ + η + ν + Σ (γ₁ₗ − γ₂ₗ) pₗ
/// s.t. β (γ₁ₗ − γ₂ₗ + ν) ≥ sₗ ≥ vₗ − η,  sₗ ≥ 0,
///      γ₁ₗ + γ₂ₗ ≤ λ,  λ, γ₁, γ₂ ≥ 0.
/// ```
pub fn worst_case_cvar_dual(values: &[f64], amb: &AmbiguitySet, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_values(values, amb.center())?;
    let (v, p) = merge_atoms(values, amb.center().probs());
    dual_lp_value(&v, &p, amb.radius(), beta)
}

fn dual_lp_value(values: &[f64], probs: &[f64], radius: f64, beta: f64) -> Result<f64> {
    let l = values.len();
    // columns: λ, η, ν, γ₁ (l), γ₂ (l), s (l)
    let (lam, eta, nu) = (0, 1, 2);
    let g1 = |i: usize| 3 + i;
    let g2 = |i: usize| 3 + l + i;
    let s = |i: usize| 3 + 2 * l + i;
    let n = 3 + 3 * l;

    let mut cost = vec![0.0; n];
    cost[lam] = 2.0 * radius;
    cost[eta] = 1.0;
    cost[nu] = 1.0;
    for i in 0..l {
        cost[g1(i)] = probs[i];
        cost[g2(i)] = -probs[i];
    }
    let mut lp = LpProblem::new(cost);
    lp.set_free(eta)?;
    lp.set_free(nu)?;
    for i in 0..l {
        // vₗ − η − sₗ ≤ 0
        let mut row = vec![0.0; n];
        row[eta] = -1.0;
        row[s(i)] = -1.0;
        lp.add_le(row, -values[i])?;
        // sₗ − β(γ₁ₗ − γ₂ₗ + ν) ≤ 0
        let mut row = vec![0.0; n];
        row[s(i)] = 1.0;
        row[g1(i)] = -beta;
        row[g2(i)] = beta;
        row[nu] = -beta;
        lp.add_le(row, 0.0)?;
        // γ₁ₗ + γ₂ₗ − λ ≤ 0
        let mut row = vec![0.0; n];
        row[g1(i)] = 1.0;
        row[g2(i)] = 1.0;
        row[lam] = -1.0;
        lp.add_le(row, 0.0)?;
    }
    let sol = lp_solve(&lp)?;
    if !sol.is_optimal() {
        return Err(Error::Numerical(format!(
            "worst-case CVaR dual returned {:?} after {} pivots for values {values:?}",
            sol.status, sol.pivots
        )));
    }
    Ok(sol.objective)
}

/// Worst-case CVaR via the primal linear program over the ball:
/// maximize `Σ qₗ vₗ` subject to `0 ≤ β qₗ ≤ μₗ`, `Σ q = Σ μ = 1` and
/// `Σ |μₗ − pₗ| ≤ 2θ`.
pub fn worst_case_cvar_primal(values: &[f64], amb: &AmbiguitySet, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_values(values, amb.center())?;
    let probs = amb.center().probs();
    let l = values.len();
    // columns: q (l), μ (l), d⁺ (l), d⁻ (l)
    let q = |i: usize| i;
    let mu = |i: usize| l + i;
    let dp = |i: usize| 2 * l + i;
    let dm = |i: usize| 3 * l + i;
    let n = 4 * l;

    let mut cost = vec![0.0; n];
    for i in 0..l {
        cost[q(i)] = -values[i];
    }
    let mut lp = LpProblem::new(cost);
    let mut sum_q = vec![0.0; n];
    let mut sum_mu = vec![0.0; n];
    let mut budget = vec![0.0; n];
    for i in 0..l {
        let mut row = vec![0.0; n];
        row[q(i)] = beta;
        row[mu(i)] = -1.0;
        lp.add_le(row, 0.0)?;
        let mut row = vec![0.0; n];
        row[mu(i)] = 1.0;
        row[dp(i)] = -1.0;
        row[dm(i)] = 1.0;
        lp.add_eq(row, probs[i])?;
        sum_q[q(i)] = 1.0;
        sum_mu[mu(i)] = 1.0;
        budget[dp(i)] = 1.0;
        budget[dm(i)] = 1.0;
    }
    lp.add_eq(sum_q, 1.0)?;
    lp.add_eq(sum_mu, 1.0)?;
    lp.add_le(budget, 2.0 * amb.radius())?;
    let sol = lp_solve(&lp)?;
    if !sol.is_optimal() {
        return Err(Error::Numerical(format!(
            "worst-case CVaR primal returned {:?} after {} pivots",
            sol.status, sol.pivots
        )));
    }
    Ok(-sol.objective)
}

/// The distribution in the ball that first-order dominates every other one:
/// up to `radius` mass is taken from the lowest values and placed on the
/// highest. Returned over the merged, sorted atoms of [`merge_atoms`].
pub fn worst_case_distribution(values: &[f64], probs: &[f64], radius: f64) -> (Vec<f64>, Vec<f64>) {
    let (v, mut p) = merge_atoms(values, probs);
    let top = v.len() - 1;
    let mut remaining = radius.min(1.0 - p[top]).max(0.0);
    let mut moved = 0.0;
    for prob in p.iter_mut().take(top) {
        if remaining <= 0.0 {
            break;
        }
        let take = prob.min(remaining);
        *prob -= take;
        remaining -= take;
        moved += take;
    }
    p[top] += moved;
    (v, p)
}

/// Worst-case CVaR as the CVaR of [`worst_case_distribution`].
pub fn worst_case_cvar_closed_form(values: &[f64], amb: &AmbiguitySet, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_values(values, amb.center())?;
    let (v, p) = worst_case_distribution(values, amb.center().probs(), amb.radius());
    Ok(cvar_unchecked(&v, &p, beta))
}

/// Whether `sup_{μ ∈ amb} CVaR_β^μ(values) ≤ δ + TOL_FEAS`.
///
/// Since every CVaR lies between the smallest and largest value, those
/// bounds settle most calls without touching the linear program.
pub fn dr_risk_satisfied(values: &[f64], amb: &AmbiguitySet, spec: &RiskSpec) -> Result<bool> {
    check_values(values, amb.center())?;
    let threshold = spec.delta + TOL_FEAS;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= threshold {
        return Ok(true);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min > threshold {
        return Ok(false);
    }
    Ok(worst_case_cvar_dual(values, amb, spec.beta)? <= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::SupportGrid;
    use proptest::prelude::*;

    fn grid(l: usize) -> SupportGrid {
        SupportGrid::new((0..l).map(|i| i as f64).collect()).unwrap()
    }

    fn dist(probs: Vec<f64>) -> DiscreteDistribution {
        DiscreteDistribution::new(grid(probs.len()), probs).unwrap()
    }

    fn ball(probs: Vec<f64>, radius: f64) -> AmbiguitySet {
        AmbiguitySet::new(dist(probs), radius).unwrap()
    }

    /// Minimizes the CVaR objective over a uniform grid of thresholds.
    fn cvar_by_grid(values: &[f64], probs: &[f64], beta: f64, step: f64) -> f64 {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        let steps = ((hi - lo) / step).ceil() as usize;
        (0..=steps)
            .map(|k| cvar_objective(values, probs, beta, lo + k as f64 * step))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest CVaR over a grid of the 1-simplex intersected with the ball.
    fn brute_force_two_atoms(values: &[f64], center: &[f64], beta: f64, radius: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let m0 = k as f64 / 1000.0;
            let mu = [m0, 1.0 - m0];
            let tv = 0.5 * ((mu[0] - center[0]).abs() + (mu[1] - center[1]).abs());
            if tv <= radius + 1e-12 {
                best = best.max(cvar_unchecked(values, &mu, beta));
            }
        }
        best
    }

    #[test]
    fn cvar_of_constant_is_constant() {
        let d = dist(vec![0.1, 0.2, 0.3, 0.4]);
        for beta in [0.01, 0.3, 1.0] {
            assert!((cvar(&[2.5; 4], &d, beta).unwrap() - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn cvar_uniform_four_atoms() {
        let d = dist(vec![0.25; 4]);
        let values = [0.0, 1.0, 2.0, 3.0];
        let oracle = cvar_by_grid(&values, d.probs(), 0.5, 1.0 / 256.0);
        assert!((oracle - 2.5).abs() < 1e-12);
        assert!((cvar(&values, &d, 0.5).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn cvar_at_level_one_is_mean() {
        let d = dist(vec![0.1, 0.6, 0.3]);
        let values = [-1.0, 2.0, 5.0];
        assert!((cvar(&values, &d, 1.0).unwrap() - 2.6).abs() < 1e-14);
    }

    #[test]
    fn cvar_rejects_bad_inputs() {
        let d = dist(vec![0.5, 0.5]);
        assert!(cvar(&[0.0, 1.0], &d, 0.0).is_err());
        assert!(cvar(&[0.0, 1.0], &d, 1.5).is_err());
        assert!(cvar(&[0.0], &d, 0.5).is_err());
        assert!(var(&[0.0, f64::NAN], &d, 0.5).is_err());
    }

    #[test]
    fn var_examples() {
        let d = dist(vec![0.25; 4]);
        assert_eq!(var(&[7.0; 4], &d, 0.3).unwrap(), 7.0);
        // P(Z ≤ 2) = 0.75 already meets the 0.75 level
        assert_eq!(var(&[0.0, 1.0, 2.0, 3.0], &d, 0.25).unwrap(), 2.0);
        assert_eq!(var(&[0.0, 1.0, 2.0, 3.0], &d, 0.2).unwrap(), 3.0);
        let d = dist(vec![0.9, 0.1]);
        assert_eq!(var(&[0.0, 1.0], &d, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn zero_radius_matches_center_cvar() {
        let amb = ball(vec![0.1, 0.2, 0.3, 0.4], 0.0);
        let values = [0.3, -1.0, 4.0, 2.0];
        let plain = cvar(&values, amb.center(), 0.2).unwrap();
        assert!((worst_case_cvar_dual(&values, &amb, 0.2).unwrap() - plain).abs() < 1e-8);
        assert!((worst_case_cvar_primal(&values, &amb, 0.2).unwrap() - plain).abs() < 1e-8);
    }

    #[test]
    fn unit_radius_gives_maximum() {
        let amb = ball(vec![0.7, 0.2, 0.1, 0.0], 1.0);
        let values = [0.3, -1.0, 4.0, 2.0];
        for beta in [0.05, 0.5, 1.0] {
            assert!((worst_case_cvar_dual(&values, &amb, beta).unwrap() - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dual_and_primal_agree_on_uniform_example() {
        let amb = ball(vec![0.25; 4], 0.1);
        let values = [0.0, 1.0, 2.0, 3.0];
        let d = worst_case_cvar_dual(&values, &amb, 0.5).unwrap();
        let p = worst_case_cvar_primal(&values, &amb, 0.5).unwrap();
        assert!((d - p).abs() < 1e-6);
        // 0.1 mass moves from 0 to 3, so the upper half averages (0.35·3 + 0.15·2)/0.5
        assert!((d - 2.7).abs() < 1e-9);
    }

    #[test]
    fn primal_two_atom_example() {
        let amb = ball(vec![1.0, 0.0], 0.25);
        let values = [0.0, 1.0];
        let oracle = brute_force_two_atoms(&values, &[1.0, 0.0], 0.5, 0.25);
        assert!((oracle - 0.5).abs() < 1e-12);
        assert!((worst_case_cvar_primal(&values, &amb, 0.5).unwrap() - oracle).abs() < 1e-9);
        assert!((worst_case_cvar_dual(&values, &amb, 0.5).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn risk_check_shortcuts() {
        let amb = ball(vec![0.5, 0.3, 0.2], 0.3);
        let spec = RiskSpec::new(0.05, 0.02).unwrap();
        assert!(dr_risk_satisfied(&[0.0, 0.01, 0.02], &amb, &spec).unwrap());
        assert!(!dr_risk_satisfied(&[0.03, 0.5, 0.1], &amb, &spec).unwrap());
        assert!(dr_risk_satisfied(&[0.0; 3], &amb, &spec).unwrap());
        // only the rarely weighted atom is risky, yet the ball can inflate it
        assert!(!dr_risk_satisfied(&[0.0, 0.0, 0.1], &amb, &spec).unwrap());
    }

    #[test]
    fn parameter_validation() {
        assert!(RiskSpec::new(0.0, 0.1).is_err());
        assert!(RiskSpec::new(0.5, 0.0).is_err());
        assert!(AmbiguitySet::new(dist(vec![1.0]), -0.1).is_err());
        assert!(AmbiguitySet::new(dist(vec![1.0]), 0.1)
            .unwrap()
            .with_confidence(1.0)
            .is_err());
    }

    #[test]
    fn ball_membership() {
        let amb = ball(vec![0.5, 0.5], 0.25);
        assert!(amb.contains(&dist(vec![0.75, 0.25])).unwrap());
        assert!(!amb.contains(&dist(vec![0.8, 0.2])).unwrap());
    }

    fn instance(max_atoms: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..=max_atoms).prop_flat_map(|l| {
            (
                prop::collection::vec(-2.0f64..2.0, l),
                prop::collection::vec(0.0f64..1.0, l),
            )
                .prop_map(|(v, mut w)| {
                    w[0] += 1e-3;
                    let total: f64 = w.iter().sum();
                    w.iter_mut().for_each(|x| *x /= total);
                    (v, w)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn strong_duality((values, probs) in instance(12), beta in 0.01f64..=1.0, radius in 0.0f64..=1.0) {
            let amb = ball(probs, radius);
            let d = worst_case_cvar_dual(&values, &amb, beta).unwrap();
            let p = worst_case_cvar_primal(&values, &amb, beta).unwrap();
            let c = worst_case_cvar_closed_form(&values, &amb, beta).unwrap();
            prop_assert!((d - p).abs() <= 1e-6);
            prop_assert!((d - c).abs() <= 1e-6);
        }

        #[test]
        fn monotone_in_radius((values, probs) in instance(10), beta in 0.01f64..=1.0, r1 in 0.0f64..1.0, r2 in 0.0f64..1.0) {
            let (lo, hi) = (r1.min(r2), r1.max(r2));
            let small = worst_case_cvar_dual(&values, &ball(probs.clone(), lo), beta).unwrap();
            let large = worst_case_cvar_dual(&values, &ball(probs, hi), beta).unwrap();
            prop_assert!(small <= large + 1e-9);
        }

        #[test]
        fn monotone_in_beta((values, probs) in instance(10), b1 in 0.01f64..=1.0, b2 in 0.01f64..=1.0) {
            let d = dist(probs);
            let (lo, hi) = (b1.min(b2), b1.max(b2));
            prop_assert!(cvar(&values, &d, lo).unwrap() >= cvar(&values, &d, hi).unwrap() - 1e-12);
        }

        #[test]
        fn bounded_by_extremes((values, probs) in instance(10), beta in 0.01f64..=1.0, radius in 0.0f64..=1.0) {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let amb = ball(probs, radius);
            let plain = cvar(&values, amb.center(), beta).unwrap();
            let worst = worst_case_cvar_dual(&values, &amb, beta).unwrap();
            prop_assert!(min - 1e-12 <= plain && plain <= max + 1e-12);
            prop_assert!(min - 1e-9 <= worst && worst <= max + 1e-9);
            prop_assert!(plain <= worst + 1e-9);
        }

        #[test]
        fn translation_and_scaling((values, probs) in instance(10), beta in 0.01f64..=1.0, a in 0.1f64..10.0, c in -5.0f64..5.0) {
            let d = dist(probs);
            let shifted: Vec<f64> = values.iter().map(|v| a * v + c).collect();
            let lhs = cvar(&shifted, &d, beta).unwrap();
            let rhs = a * cvar(&values, &d, beta).unwrap() + c;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
