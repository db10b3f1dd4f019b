//! Distributionally robust, risk-constrained iterative model predictive control.

pub mod config;
pub mod distributions;
pub mod error;
pub mod iterate;
pub mod linprog;
pub mod mpc;
pub mod ocp;
pub mod qp;
pub mod report;
pub mod risk;
pub mod safeset;

pub use config::{parse_config, parse_config_str, ExperimentConfig, RunSettings};
pub use distributions::{DiscreteDistribution, SampleSet, SupportGrid};
pub use error::{Error, Result};
pub use iterate::{run_experiment, run_iteration, seed, IterationSettings, IterationState, RadiusSchedule};
pub use linprog::{lp_solve, LpError, LpProblem, LpSolution, LpStatus};
pub use mpc::{
    dr_mpc, lyapunov_check, solve_fhp, ClosedLoopTrajectory, FhpSolution, FiniteHorizonProblem, MpcSettings, Plan,
};
pub use ocp::{BoxSet, Input, LinearDynamics, ObstacleModel, QuadraticStageCost, Scenario, State};
pub use report::{emit_report, ExperimentReport, IterationRecord, ReportPaths};
pub use risk::{AmbiguitySet, RiskSpec};
pub use safeset::{SafeSetEntry, SampledSafeSet};
