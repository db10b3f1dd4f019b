//! Finite discrete distributions over a grid of scalar uncertainty values.
//!
//! The uncertainty is scalar throughout; a [`SupportGrid`] lists its possible
//! values and a [`DiscreteDistribution`] attaches a probability vector to it.
//! Observed samples are stored as support indices in a [`SampleSet`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use crate::error::{Error, Result};

/// Probabilities must sum to one within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Strictly increasing list of scalar uncertainty values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SupportGrid {
    points: Vec<f64>,
}

impl SupportGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parameter("support grid must have at least one point".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Parameter("support points must be finite".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("support points must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// Grid `start + i * width / (count - 1)` for `i = 0..count`.
    pub fn evenly_spaced(start: f64, width: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Parameter("support grid must have at least one point".into()));
        }
        if count == 1 {
            return Self::new(vec![start]);
        }
        let denom = (count - 1) as f64;
        Self::new((0..count).map(|i| start + i as f64 * width / denom).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl TryFrom<Vec<f64>> for SupportGrid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<SupportGrid> for Vec<f64> {
    fn from(grid: SupportGrid) -> Self {
        grid.points
    }
}

/// Probability vector over a [`SupportGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: SupportGrid,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: SupportGrid, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != support.len() {
            return Err(Error::Dimension {
                context: "distribution probabilities",
                expected: support.len(),
                actual: probs.len(),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Parameter("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Parameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { support, probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(support: SupportGrid, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter("weights must be nonnegative with a positive sum".into()));
        }
        Self::new(support, weights.iter().map(|w| w / total).collect())
    }

    pub fn point_mass(support: SupportGrid, index: usize) -> Result<Self> {
        if index >= support.len() {
            return Err(Error::Parameter(format!(
                "atom {index} outside support of size {}",
                support.len()
            )));
        }
        let mut probs = vec![0.0; support.len()];
        probs[index] = 1.0;
        Self::new(support, probs)
    }

    pub fn uniform(support: SupportGrid) -> Self {
        let n = support.len();
        Self {
            probs: vec![1.0 / n as f64; n],
            support,
        }
    }

    /// Beta-binomial law with `support.len() - 1` trials placed on the grid.
    pub fn beta_binomial(support: SupportGrid, alpha: f64, beta: f64) -> Result<Self> {
        let probs = beta_binomial_pmf(support.len(), alpha, beta)?;
        Self::new(support, probs)
    }

    pub fn support(&self) -> &SupportGrid {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .zip(self.support.points())
            .map(|(p, w)| p * w)
            .sum()
    }
}

/// Beta-binomial pmf over `k = 0..num_outcomes`, i.e. with `num_outcomes - 1` trials.
pub fn beta_binomial_pmf(num_outcomes: usize, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    if num_outcomes == 0 {
        return Err(Error::Parameter("beta-binomial needs at least one outcome".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(Error::Parameter(format!(
            "beta-binomial shape parameters must be positive, got ({alpha}, {beta})"
        )));
    }
    let trials = num_outcomes - 1;
    // successive ratios p(k+1)/p(k) keep every term within a few ulps
    let mut pmf = Vec::with_capacity(num_outcomes);
    let mut weight = 1.0_f64;
    pmf.push(weight);
    for k in 0..trials {
        let (k, n) = (k as f64, trials as f64);
        weight *= (n - k) * (k + alpha) / ((k + 1.0) * (n - k - 1.0 + beta));
        pmf.push(weight);
        if weight > 1e250 {
            pmf.iter_mut().for_each(|p| *p *= 1e-250);
            weight *= 1e-250;
        }
    }
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    Ok(pmf)
}

/// Draws `n` i.i.d. support indices by inverting the cumulative distribution.
pub fn sample<R: Rng + ?Sized>(dist: &DiscreteDistribution, rng: &mut R, n: usize) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(dist.len());
    let mut acc = 0.0;
    for p in dist.probs() {
        acc += p;
        cdf.push(acc);
    }
    let last_positive = dist.probs().iter().rposition(|p| *p > 0.0).unwrap_or(0);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let idx = cdf.partition_point(|c| *c <= u);
            idx.min(last_positive)
        })
        .collect()
}

/// Growing dataset of observed support indices, tracked per batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    support_size: usize,
    samples: Vec<usize>,
    batch_sizes: Vec<usize>,
}

impl SampleSet {
    pub fn new(support_size: usize) -> Self {
        Self {
            support_size,
            samples: Vec::new(),
            batch_sizes: Vec::new(),
        }
    }

    /// Appends one batch (e.g. the samples gathered during one iteration).
    pub fn push_batch(&mut self, batch: &[usize]) -> Result<()> {
        if let Some(bad) = batch.iter().find(|&&i| i >= self.support_size) {
            return Err(Error::Parameter(format!(
                "sample index {bad} outside support of size {}",
                self.support_size
            )));
        }
        self.samples.extend_from_slice(batch);
        self.batch_sizes.push(batch.len());
        Ok(())
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn batch_sizes(&self) -> &[usize] {
        &self.batch_sizes
    }

    pub fn support_size(&self) -> usize {
        self.support_size
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Relative frequencies of the observed atoms.
pub fn empirical(samples: &SampleSet, support: &SupportGrid) -> Result<DiscreteDistribution> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if samples.support_size() != support.len() {
        return Err(Error::SupportMismatch);
    }
    let mut counts = vec![0usize; support.len()];
    for &i in samples.samples() {
        counts[i] += 1;
    }
    let n = samples.len() as f64;
    DiscreteDistribution::new(
        support.clone(),
        counts.into_iter().map(|c| c as f64 / n).collect(),
    )
}

/// Total-variation distance `½ Σ |pᵢ − qᵢ|`.
pub fn tv_distance(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.support() != q.support() {
        return Err(Error::SupportMismatch);
    }
    Ok(0.5
        * p.probs()
            .iter()
            .zip(q.probs())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}
