//! TOML experiment configuration.
//!
//! Every field is optional; omitted fields take the benchmark values.
//! Matrices are row-major nested arrays.
//!
//! ```toml
//! [scenario]
//! start = [0.0, 0.0, 0.0, 0.0]
//! target = [5.0, 3.0, 0.0, 0.0]
//!
//! [algorithm]
//! horizon = 5
//! theta = 0.05
//! iterations = 20
//! seed = 7
//!
//! [output]
//! dir = "out"
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::distributions::{DiscreteDistribution, SupportGrid};
use crate::error::{Error, Result};
use crate::iterate::{IterationSettings, RadiusSchedule};
use crate::mpc::MpcSettings;
use crate::ocp::{BoxSet, LinearDynamics, ObstacleModel, QuadraticStageCost, Scenario};
use crate::report::ReportPaths;
use crate::risk::{RiskSpec, MIN_BETA};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub algorithm: AlgorithmConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub start: Option<Vec<f64>>,
    pub target: Option<Vec<f64>>,
    pub state_lower: Option<Vec<f64>>,
    pub state_upper: Option<Vec<f64>>,
    pub input_lower: Option<Vec<f64>>,
    pub input_upper: Option<Vec<f64>>,
    pub obstacle: Option<ObstacleConfig>,
    pub support: Option<SupportConfig>,
    pub distribution: Option<DistributionConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub center: [f64; 2],
    pub direction: [f64; 2],
    pub half_length: f64,
    #[serde(default = "default_position_coords")]
    pub position_coords: [usize; 2],
}

fn default_position_coords() -> [usize; 2] {
    [0, 1]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SupportConfig {
    Points { points: Vec<f64> },
    Grid { start: f64, width: f64, count: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionConfig {
    BetaBinomial { alpha: f64, beta: f64 },
    Uniform,
    Weights { weights: Vec<f64> },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub horizon: Option<Spanned<i64>>,
    pub beta: Option<Spanned<f64>>,
    pub delta: Option<Spanned<f64>>,
    pub theta: Option<Spanned<f64>>,
    pub schedule: Option<Spanned<RadiusSchedule>>,
    /// Confidence attached to the ambiguity sets; informational only.
    pub confidence: Option<Spanned<f64>>,
    pub initial_samples: Option<Spanned<i64>>,
    pub iterations: Option<Spanned<i64>>,
    pub eps_term: Option<Spanned<f64>>,
    pub max_steps: Option<Spanned<i64>>,
    pub candidate_cap: Option<Spanned<i64>>,
    pub seed: Option<u64>,
    pub freeze_dataset: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub obstacles: Option<PathBuf>,
    pub checkpoints: Option<bool>,
}

/// Validated run parameters derived from an [`ExperimentConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub iteration: IterationSettings,
    pub iterations: usize,
    pub seed: u64,
    pub confidence: Option<f64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn range_error(text: &str, span: Range<usize>, message: String) -> Error {
    Error::Config {
        line: line_of(text, span.start),
        message,
    }
}

/// Parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<(ExperimentConfig, RunSettings)> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Parses and validates configuration text.
pub fn parse_config_str(text: &str) -> Result<(ExperimentConfig, RunSettings)> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let settings = config.run_settings(text)?;
    config.scenario()?;
    Ok((config, settings))
}

fn positive_int(text: &str, value: &Option<Spanned<i64>>, name: &str, default: usize) -> Result<usize> {
    match value {
        None => Ok(default),
        Some(v) if *v.get_ref() >= 1 => Ok(*v.get_ref() as usize),
        Some(v) => Err(range_error(text, v.span(), format!("{name} must be at least 1, got {}", v.get_ref()))),
    }
}

impl AlgorithmConfig {
    fn risk_spec(&self, text: &str) -> Result<RiskSpec> {
        let beta = self.beta.as_ref().map_or(0.05, |b| *b.get_ref());
        if let Some(b) = &self.beta {
            if !(MIN_BETA..=1.0).contains(b.get_ref()) {
                return Err(range_error(text, b.span(), format!("beta must lie in [{MIN_BETA:e}, 1], got {beta}")));
            }
        }
        let delta = self.delta.as_ref().map_or(0.02, |d| *d.get_ref());
        if let Some(d) = &self.delta {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(range_error(text, d.span(), format!("delta must be positive, got {delta}")));
            }
        }
        RiskSpec::new(beta, delta)
    }
}

impl ExperimentConfig {
    /// Validated algorithm settings. `text` is the source the config was
    /// parsed from and is used to report line numbers.
    pub fn run_settings(&self, text: &str) -> Result<RunSettings> {
        let alg = &self.algorithm;
        alg.risk_spec(text)?;
        let horizon = positive_int(text, &alg.horizon, "horizon", 5)?;
        let schedule = match (&alg.theta, &alg.schedule) {
            (Some(t), Some(_)) => {
                return Err(range_error(text, t.span(), "give either theta or schedule, not both".into()));
            }
            (Some(t), None) => {
                let theta = *t.get_ref();
                if !(0.0..=1.0).contains(&theta) {
                    return Err(range_error(text, t.span(), format!("theta must lie in [0, 1], got {theta}")));
                }
                RadiusSchedule::Constant { theta }
            }
            (None, Some(s)) => {
                s.get_ref()
                    .validate()
                    .map_err(|e| range_error(text, s.span(), e.to_string()))?;
                *s.get_ref()
            }
            (None, None) => RadiusSchedule::Constant { theta: 5e-2 },
        };
        let confidence = match &alg.confidence {
            Some(c) if !(c.get_ref() > &0.0 && c.get_ref() < &1.0) => {
                return Err(range_error(text, c.span(), "confidence must lie in (0, 1)".into()));
            }
            c => c.as_ref().map(|c| *c.get_ref()),
        };
        let eps_term = alg.eps_term.as_ref().map_or(1e-2, |e| *e.get_ref());
        if let Some(e) = &alg.eps_term {
            if !(eps_term > 0.0 && eps_term.is_finite()) {
                return Err(range_error(text, e.span(), "eps_term must be positive".into()));
            }
        }
        let iterations = match &alg.iterations {
            None => 20,
            Some(v) if *v.get_ref() >= 0 => *v.get_ref() as usize,
            Some(v) => return Err(range_error(text, v.span(), "iterations must be nonnegative".into())),
        };
        let candidate_cap = match &alg.candidate_cap {
            None => None,
            some => Some(positive_int(text, some, "candidate_cap", 1)?),
        };
        Ok(RunSettings {
            iteration: IterationSettings {
                mpc: MpcSettings {
                    horizon,
                    eps_term,
                    max_steps: positive_int(text, &alg.max_steps, "max_steps", 500)?,
                    candidate_cap,
                },
                schedule,
                initial_samples: positive_int(text, &alg.initial_samples, "initial_samples", 5)?,
                freeze_dataset: alg.freeze_dataset.unwrap_or(false),
            },
            iterations,
            seed: alg.seed.unwrap_or(0),
            confidence,
        })
    }

    /// Builds the scenario, starting from the benchmark and overriding every
    /// field given in the file.
    pub fn scenario(&self) -> Result<Scenario> {
        let sc = &self.scenario;
        let mut s = Scenario::benchmark();
        s.risk = self.algorithm.risk_spec("")?;
        if sc.a.is_some() || sc.b.is_some() {
            let a = sc.a.as_ref().map_or_else(|| Ok(s.dynamics.a().clone()), |m| matrix("a", m))?;
            let b = sc.b.as_ref().map_or_else(|| Ok(s.dynamics.b().clone()), |m| matrix("b", m))?;
            s.dynamics = LinearDynamics::new(a, b)?;
        }
        let q = sc.q.as_ref().map_or_else(|| Ok(s.cost.q().clone()), |m| matrix("q", m))?;
        let r = sc.r.as_ref().map_or_else(|| Ok(s.cost.r().clone()), |m| matrix("r", m))?;
        let target = sc.target.clone().map_or_else(|| s.target().clone(), DVector::from_vec);
        s.cost = QuadraticStageCost::new(q, r, target)?;
        if let Some(start) = &sc.start {
            s.start = DVector::from_vec(start.clone());
        }
        let bounds = |lo: &Option<Vec<f64>>, hi: &Option<Vec<f64>>, current: &BoxSet| {
            BoxSet::new(
                lo.clone().map_or_else(|| current.lower().clone(), DVector::from_vec),
                hi.clone().map_or_else(|| current.upper().clone(), DVector::from_vec),
            )
        };
        s.state_box = bounds(&sc.state_lower, &sc.state_upper, &s.state_box)?;
        s.input_box = bounds(&sc.input_lower, &sc.input_upper, &s.input_box)?;
        if let Some(o) = &sc.obstacle {
            s.obstacle = ObstacleModel::new(o.center, o.direction, o.half_length, o.position_coords)?;
        }
        if let Some(support) = &sc.support {
            s.support = match support {
                SupportConfig::Points { points } => SupportGrid::new(points.clone())?,
                SupportConfig::Grid { start, width, count } => SupportGrid::evenly_spaced(*start, *width, *count)?,
            };
        }
        let distribution = sc
            .distribution
            .clone()
            .unwrap_or(DistributionConfig::BetaBinomial { alpha: 10.0, beta: 15.0 });
        s.true_distribution = match distribution {
            DistributionConfig::BetaBinomial { alpha, beta } => {
                DiscreteDistribution::beta_binomial(s.support.clone(), alpha, beta)?
            }
            DistributionConfig::Uniform => DiscreteDistribution::uniform(s.support.clone()),
            DistributionConfig::Weights { weights } => DiscreteDistribution::from_weights(s.support.clone(), &weights)?,
        };
        s.validate()?;
        Ok(s)
    }

    /// Output locations, relative to `out` when given (overrides `dir`).
    pub fn report_paths(&self, out: Option<&Path>) -> ReportPaths {
        let dir = out
            .map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let mut paths = ReportPaths::in_dir(&dir);
        if let Some(p) = &self.output.trajectories {
            paths.trajectories = dir.join(p);
        }
        if let Some(p) = &self.output.summary {
            paths.summary = dir.join(p);
        }
        if let Some(p) = &self.output.obstacles {
            paths.obstacles = dir.join(p);
        }
        paths
    }

    pub fn checkpoints(&self) -> bool {
        self.output.checkpoints.unwrap_or(false)
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parameter(format!("matrix {name} must be a nonempty rectangular array")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}
