use thiserror::Error;

use crate::linprog::LpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empirical distribution of an empty sample set is undefined")]
    EmptySamples,

    #[error("distributions are defined on different supports")]
    SupportMismatch,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Lp(#[from] LpError),

    #[error("finite-horizon problem infeasible at state {state:?}: {diagnostic}")]
    Infeasible { state: Vec<f64>, diagnostic: String },

    #[error("closed loop did not reach the target within {max_steps} steps (last costs {last_costs:?})")]
    NonConvergence {
        max_steps: usize,
        last_costs: Vec<f64>,
    },

    #[error("trajectory error: {0}")]
    Trajectory(String),

    #[error("seed trajectory rejected: {0}")]
    Seed(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
