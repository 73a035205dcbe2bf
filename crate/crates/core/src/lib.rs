//! Balanced off-policy evaluation of personalized pricing policies.
//!
//! Given logged `(features, price, purchase)` data and the prices a target
//! policy would charge the same customers, the crate computes doubly-robust
//! weighted revenue estimates whose weights minimize a worst-case MSE, or
//! minimize a worst-case Bernstein penalty, over an RKHS ball of plausible
//! revenue functions intersected with the box `0 ≤ r ≤ p`.

pub mod baselines;
pub mod data;
pub mod estimator;
pub mod experiments;
pub mod hyperfit;
pub mod kernel;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod wcopt;

pub use data::{CsvSchema, EvaluationInstance, PricingDataset, TargetPolicySpec};
pub use estimator::{BoundConfig, RevenueBall, Weights};
pub use kernel::{GramFactorization, KernelConfig};
pub use wcopt::{Objective, SolverConfig, WorstCaseResult, WorstCaseSolver};
