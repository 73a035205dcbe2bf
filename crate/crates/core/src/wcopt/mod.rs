//! Minimax weight selection: inner worst-case revenue over the plausible set,
//! Danskin gradients, the outer weight optimizer and a grid oracle.

mod barrier;
mod feasible;
mod gradient;
mod inner;
mod oracle;
mod outer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use feasible::FeasibleSet;
pub use gradient::danskin_gradient;
pub use inner::WorstCaseSolver;
pub use oracle::{MAX_ORACLE_N, OracleResult, brute_force_oracle};
pub use outer::WeightSolution;

use crate::data::EvaluationInstance;
use crate::estimator::{BoundConfig, RevenueBall, Weights};
use crate::kernel::GramFactorization;

#[derive(Debug, Error, PartialEq)]
pub enum WcoptError {
    #[error("dimension mismatch: {what} has {got} entries, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("grid oracle supports n ≤ {max}, got n = {n}")]
    InstanceTooLarge { n: usize, max: usize },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// Which worst-case metric the weights minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mse,
    Bern,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(Self::Mse),
            "bern" => Ok(Self::Bern),
            other => Err(format!("unknown objective `{other}` (expected mse or bern)")),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mse => "mse",
            Self::Bern => "bern",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub outer_max_iters: usize,
    pub inner_max_iters: usize,
    pub outer_tol: f64,
    pub inner_tol: f64,
    /// Tilt grid size for the MSE inner sweep.
    pub bias_slices: usize,
    /// Local refinements of the MSE sweep: the best slice plus random tilts.
    pub multistarts: usize,
    /// Even power of the norm that smooths the Bernstein max-term.
    pub smoothing_p: u32,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            outer_max_iters: 300,
            inner_max_iters: 2000,
            outer_tol: 1e-6,
            inner_tol: 1e-7,
            bias_slices: 41,
            multistarts: 5,
            smoothing_p: 16,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), WcoptError> {
        let bad = |msg: &str| Err(WcoptError::InvalidConfig(msg.to_string()));
        if self.outer_max_iters == 0 || self.inner_max_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.bias_slices < 3 {
            return bad("bias_slices must be at least 3");
        }
        if self.multistarts == 0 {
            return bad("multistarts must be at least 1");
        }
        if self.smoothing_p < 8 || self.smoothing_p % 2 != 0 {
            return bad("smoothing_p must be an even integer ≥ 8");
        }
        Ok(())
    }
}

/// Maximizer of the inner problem for one weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseResult {
    pub r_wc: Vec<f64>,
    pub objective: f64,
    pub active_jitter: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn wc_mse_inner(
    w: &Weights,
    inst: &EvaluationInstance,
    ball: &RevenueBall,
    gf: &GramFactorization,
    cfg: &SolverConfig,
) -> Result<WorstCaseResult, WcoptError> {
    let solver = WorstCaseSolver::new(inst, ball, gf, cfg, &BoundConfig::default())?;
    Ok(solver.mse(w, None))
}

pub fn wc_bern_inner(
    w: &Weights,
    inst: &EvaluationInstance,
    ball: &RevenueBall,
    gf: &GramFactorization,
    cfg: &SolverConfig,
    bound: &BoundConfig,
) -> Result<WorstCaseResult, WcoptError> {
    let solver = WorstCaseSolver::new(inst, ball, gf, cfg, bound)?;
    Ok(solver.bern(w, None))
}

/// Minimax weights starting from zero weights.
pub fn solve_weights(
    kind: Objective,
    inst: &EvaluationInstance,
    ball: &RevenueBall,
    gf: &GramFactorization,
    cfg: &SolverConfig,
    bound: &BoundConfig,
) -> Result<(Weights, WorstCaseResult), WcoptError> {
    let solver = WorstCaseSolver::new(inst, ball, gf, cfg, bound)?;
    let sol = solver.solve_weights(kind, &[]);
    Ok((sol.weights, sol.worst_case))
}
