//! The weighted doubly-robust revenue estimator and its exact finite-sample
//! moments under Bernoulli demand.
//!
//! With `n` logged points and weights `w ∈ ℝⁿ`:
//!
//! ```text
//! R̂(w)      = (1/n) Σᵢ wᵢ (pᵢ Dᵢ − r̂ᵢ) + (1/n) Σ_{i>n} r̂ᵢ
//! b(w)      = (1/n) (w₁, …, wₙ, −1, …, −1)
//! Bias(w,r) = b(w)ᵀ (r − r̂)
//! Var(w,r)  = (1/n²) Σᵢ wᵢ² rᵢ (pᵢ − rᵢ)
//! ```
//!
//! All length arguments are expected to be consistent (`n` weights, `2n`
//! revenues and prices); mismatches are programming errors and panic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::EvaluationInstance;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("weights must be finite")]
    NonFiniteWeights,

    #[error("radius must be finite and non-negative, got {0}")]
    InvalidRadius(f64),

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
}

/// Estimator weights on the `n` logged points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self, EstimatorError> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFiniteWeights);
        }
        Ok(Self(w))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `b(w) ∈ ℝ²ⁿ`.
    pub fn bias_vector(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.0
            .iter()
            .map(|w| w / n)
            .chain(std::iter::repeat_n(-1.0 / n, self.len()))
            .collect()
    }

    /// `v(w) ∈ ℝ²ⁿ`, the linear part of the variance.
    pub fn variance_vector(&self, prices: &[f64]) -> Vec<f64> {
        let n2 = (self.len() * self.len()) as f64;
        self.0
            .iter()
            .zip(prices)
            .map(|(w, p)| w * w * p / n2)
            .chain(std::iter::repeat_n(0.0, self.len()))
            .collect()
    }
}

/// Reference revenue, radius and price box of the plausible revenue set
/// `{ r : 0 ≤ r ≤ p, (r − r̂)ᵀG⁻¹(r − r̂) ≤ Γ̂² }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueBall {
    r_hat: Vec<f64>,
    gamma_hat: f64,
    price_box: Vec<f64>,
}

impl RevenueBall {
    /// Clips `r_hat` into `[0, price_box]` so the centre is always feasible.
    pub fn new(r_hat: Vec<f64>, gamma_hat: f64, price_box: Vec<f64>) -> Result<Self, EstimatorError> {
        if !(gamma_hat.is_finite() && gamma_hat >= 0.0) {
            return Err(EstimatorError::InvalidRadius(gamma_hat));
        }
        if r_hat.len() != price_box.len() {
            return Err(EstimatorError::LengthMismatch {
                what: "reference revenue",
                got: r_hat.len(),
                expected: price_box.len(),
            });
        }
        let r_hat = r_hat
            .iter()
            .zip(&price_box)
            .map(|(r, p)| if r.is_nan() { 0.0 } else { r.clamp(0.0, *p) })
            .collect();
        Ok(Self {
            r_hat,
            gamma_hat,
            price_box,
        })
    }

    pub fn for_instance(
        inst: &EvaluationInstance,
        r_hat: Vec<f64>,
        gamma_hat: f64,
    ) -> Result<Self, EstimatorError> {
        Self::new(r_hat, gamma_hat, inst.price_vector().to_vec())
    }

    pub fn r_hat(&self) -> &[f64] {
        &self.r_hat
    }

    pub fn gamma_hat(&self) -> f64 {
        self.gamma_hat
    }

    pub fn price_box(&self) -> &[f64] {
        &self.price_box
    }

    pub fn dim(&self) -> usize {
        self.r_hat.len()
    }

    pub fn with_radius(&self, gamma_hat: f64) -> Result<Self, EstimatorError> {
        Self::new(self.r_hat.clone(), gamma_hat, self.price_box.clone())
    }
}

/// Confidence level `ε` of the one-sided Bernstein bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub epsilon: f64,
}

impl BoundConfig {
    pub fn new(epsilon: f64) -> Result<Self, EstimatorError> {
        if epsilon > 0.0 && epsilon < 1.0 {
            Ok(Self { epsilon })
        } else {
            Err(EstimatorError::InvalidEpsilon(epsilon))
        }
    }

    pub fn log_inv_eps(&self) -> f64 {
        (1.0 / self.epsilon).ln()
    }
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { epsilon: 0.1 }
    }
}

// ── Estimate ────────────────────────────────────────────────────────────

/// `R̂(w)` from explicit logged prices and (possibly fractional) demands.
pub fn point_estimate_with(w: &Weights, logged_prices: &[f64], demands: &[f64], r_hat: &[f64]) -> f64 {
    let n = w.len();
    assert_eq!(logged_prices.len(), n);
    assert_eq!(demands.len(), n);
    assert_eq!(r_hat.len(), 2 * n);
    let correction: f64 = w
        .as_slice()
        .iter()
        .zip(logged_prices)
        .zip(demands)
        .zip(&r_hat[..n])
        .map(|(((w, p), d), r)| w * (p * d - r))
        .sum();
    let direct: f64 = r_hat[n..].iter().sum();
    (correction + direct) / n as f64
}

pub fn point_estimate(w: &Weights, inst: &EvaluationInstance, r_hat: &[f64]) -> f64 {
    point_estimate_with(w, inst.logged_prices(), inst.demands(), r_hat)
}

// ── Moments ─────────────────────────────────────────────────────────────

/// `b(w)ᵀ(r − r̂)` without materializing `b(w)`.
pub fn bias_at(w: &Weights, r: &[f64], r_hat: &[f64]) -> f64 {
    let n = w.len();
    assert_eq!(r.len(), 2 * n);
    assert_eq!(r_hat.len(), 2 * n);
    let logged: f64 = w
        .as_slice()
        .iter()
        .zip(r)
        .zip(r_hat)
        .map(|((w, r), rh)| w * (r - rh))
        .sum();
    let target: f64 = r[n..].iter().zip(&r_hat[n..]).map(|(r, rh)| r - rh).sum();
    (logged - target) / n as f64
}

pub fn bias(w: &Weights, r: &[f64], ball: &RevenueBall) -> f64 {
    bias_at(w, r, ball.r_hat())
}

/// Exact variance from the price vector `p ∈ ℝ²ⁿ` (only the logged half is read).
pub fn variance_at(w: &Weights, r: &[f64], prices: &[f64]) -> f64 {
    let n = w.len();
    assert!(r.len() >= n && prices.len() >= n);
    let s: f64 = w
        .as_slice()
        .iter()
        .zip(r)
        .zip(prices)
        .map(|((w, r), p)| w * w * r * (p - r))
        .sum();
    s / (n * n) as f64
}

pub fn variance(w: &Weights, r: &[f64], inst: &EvaluationInstance) -> f64 {
    variance_at(w, r, inst.price_vector())
}

pub fn mse(w: &Weights, r: &[f64], inst: &EvaluationInstance, ball: &RevenueBall) -> f64 {
    let b = bias(w, r, ball);
    b * b + variance(w, r, inst)
}

// ── Bernstein ───────────────────────────────────────────────────────────

/// `maxᵢ |wᵢ| pᵢ` over logged points.
pub fn max_term(w: &Weights, prices: &[f64]) -> f64 {
    w.as_slice()
        .iter()
        .zip(prices)
        .map(|(w, p)| (w * p).abs())
        .fold(0.0, f64::max)
}

/// `(Σ |wᵢpᵢ|^P)^{1/P}`, an upper approximation of [`max_term`].
pub fn smoothed_max_term(w: &Weights, prices: &[f64], power: u32) -> f64 {
    let m = max_term(w, prices);
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = w
        .as_slice()
        .iter()
        .zip(prices)
        .map(|(w, p)| ((w * p).abs() / m).powi(power as i32))
        .sum();
    m * s.powf(1.0 / f64::from(power))
}

/// `b(w)ᵀ(r−r̂) + √(2 Var log(1/ε)) + (1/3n) maxᵢ|wᵢ|pᵢ log(1/ε)`.
pub fn bernstein_penalty(
    w: &Weights,
    r: &[f64],
    inst: &EvaluationInstance,
    ball: &RevenueBall,
    cfg: &BoundConfig,
) -> f64 {
    bernstein_from_max(w, r, inst.price_vector(), ball.r_hat(), cfg, max_term(w, inst.price_vector()))
}

/// [`bernstein_penalty`] with the max-term replaced by its `P`-norm smoothing.
pub fn bernstein_penalty_smoothed(
    w: &Weights,
    r: &[f64],
    inst: &EvaluationInstance,
    ball: &RevenueBall,
    cfg: &BoundConfig,
    power: u32,
) -> f64 {
    let m = smoothed_max_term(w, inst.price_vector(), power);
    bernstein_from_max(w, r, inst.price_vector(), ball.r_hat(), cfg, m)
}

pub(crate) fn bernstein_from_max(
    w: &Weights,
    r: &[f64],
    prices: &[f64],
    r_hat: &[f64],
    cfg: &BoundConfig,
    max_term: f64,
) -> f64 {
    let l = cfg.log_inv_eps();
    let n = w.len() as f64;
    let var = variance_at(w, r, prices).max(0.0);
    bias_at(w, r, r_hat) + (2.0 * var * l).sqrt() + max_term * l / (3.0 * n)
}

/// `max(0, estimate − wc_bern)`: revenue is non-negative.
pub fn lower_bound(estimate: f64, wc_bern: f64) -> f64 {
    (estimate - wc_bern).max(0.0)
}
