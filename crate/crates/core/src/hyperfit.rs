//! Kernel and radius hyperparameters by marginal likelihood: exact for a
//! Gaussian observation model on revenue, Laplace-approximated for Bernoulli
//! purchases.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::EvaluationInstance;
use crate::kernel::{KernelConfig, KernelError, kernel_matrix};

/// Likelihood clip fraction: revenue is kept in `[δp, (1−δ)p]`.
pub const LIKELIHOOD_DELTA: f64 = 1e-4;
/// Width, as a fraction of price, of the ramp that levels off the likelihood
/// outside the box.
const RAMP: f64 = 0.05;
const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 50;
pub const DEFAULT_BUDGET: usize = 400;

const LOG_LENGTHSCALE_SQ: (f64, f64) = (-6.907_755_278_982_137, 9.210_340_371_976_184); // [1e-3, 1e4]
const LOG_GAMMA_SQ: (f64, f64) = (-18.420_680_743_952_367, 9.210_340_371_976_184); // [1e-8, 1e4]
const LOG_SIGMA_SQ: (f64, f64) = (-13.815_510_557_964_274, 9.210_340_371_976_184); // [1e-6, 1e4]

#[derive(Debug, Error, PartialEq)]
pub enum HyperfitError {
    #[error("reference revenue has {got} entries, expected {expected}")]
    Length { got: usize, expected: usize },

    #[error("covariance is not positive definite (Γ̂² = {gamma_sq}, σ² = {sigma_sq})")]
    NotPositiveDefinite { gamma_sq: f64, sigma_sq: f64 },

    #[error("invalid hyperparameters: {0}")]
    Invalid(String),

    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodVariant {
    Gaussian,
    Bernoulli,
}

impl std::str::FromStr for LikelihoodVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "bernoulli" => Ok(Self::Bernoulli),
            other => Err(format!("unknown likelihood `{other}` (expected gaussian or bernoulli)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lengthscale_sq: Vec<f64>,
    pub gamma_hat_sq: f64,
    /// Present for the Gaussian variant only.
    pub sigma_sq: Option<f64>,
    /// Log marginal likelihood at these values.
    pub evidence: f64,
}

impl HyperParams {
    pub fn gamma_hat(&self) -> f64 {
        self.gamma_hat_sq.sqrt()
    }

    pub fn kernel_config(&self, jitter: f64) -> Result<KernelConfig, KernelError> {
        KernelConfig::new(self.lengthscale_sq.clone(), jitter)
    }

    fn validate(&self, variant: LikelihoodVariant) -> Result<(), HyperfitError> {
        let bad = |m: &str| Err(HyperfitError::Invalid(m.to_string()));
        if self.lengthscale_sq.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("lengthscales must be positive");
        }
        if !(self.gamma_hat_sq.is_finite() && self.gamma_hat_sq >= 0.0) {
            return bad("Γ̂² must be non-negative");
        }
        if variant == LikelihoodVariant::Gaussian && !matches!(self.sigma_sq, Some(s) if s.is_finite() && s > 0.0) {
            return bad("the Gaussian variant needs a positive σ²");
        }
        Ok(())
    }
}

// ── Evidence ────────────────────────────────────────────────────────────

/// `log N(residual; 0, Γ̂²K + σ²I)`.
pub fn gaussian_evidence(
    k: &DMatrix<f64>,
    residual: &[f64],
    gamma_sq: f64,
    sigma_sq: f64,
) -> Result<f64, HyperfitError> {
    let n = residual.len();
    let mut c = k * gamma_sq;
    for i in 0..n {
        c[(i, i)] += sigma_sq;
    }
    let chol = c
        .cholesky()
        .ok_or(HyperfitError::NotPositiveDefinite { gamma_sq, sigma_sq })?;
    let r = DVector::from_column_slice(residual);
    let alpha = chol.solve(&r);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * r.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln())
}

/// Per-point Bernoulli log-likelihood in revenue, with derivatives.
///
/// Outside `[δp, (1−δ)p]` each of the two terms is continued with matching
/// value and slope. Where the term falls off, the continuation is its
/// second-order expansion. Where it rises, a quadratic ramp levels off
/// `RAMP·p` past the clip point and the term stays flat beyond, so leaving
/// the box gains at most `RAMP/2` nats.
pub fn bernoulli_loglik(r: f64, price: f64, demand: f64) -> (f64, f64, f64) {
    let lo = LIKELIHOOD_DELTA * price;
    let hi = (1.0 - LIKELIHOOD_DELTA) * price;
    let c = r.clamp(lo, hi);
    let d = r - c;
    let u = price - c;
    // (value, slope, curvature) of each term at the clip point; the flag marks
    // the side on which the term keeps rising
    let buy = ((c / price).ln(), 1.0 / c, -1.0 / (c * c), d > 0.0);
    let pass = ((u / price).ln(), -1.0 / u, -1.0 / (u * u), d < 0.0);
    let mut out = (0.0, 0.0, 0.0);
    for (weight, (v, g, h, rising)) in [(demand, buy), (1.0 - demand, pass)] {
        if weight == 0.0 {
            continue;
        }
        let (value, slope, curv) = if !rising {
            (v + g * d + 0.5 * h * d * d, g + h * d, h)
        } else if d.abs() < RAMP * price {
            let h = -g.abs() / (RAMP * price);
            (v + g * d + 0.5 * h * d * d, g + h * d, h)
        } else {
            (v + 0.5 * g.abs() * RAMP * price, 0.0, 0.0)
        };
        out.0 += weight * value;
        out.1 += weight * slope;
        out.2 += weight * curv;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceResult {
    /// `−∞` when Newton did not converge.
    pub evidence: f64,
    /// Posterior mode of the logged revenue vector.
    pub mode: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective after each accepted Newton step.
    pub trace: Vec<f64>,
}

/// Laplace evidence of Bernoulli purchases under the prior
/// `r ~ N(r̂, Γ̂²K)` on the logged revenue vector.
pub fn bernoulli_laplace_evidence(
    k: &DMatrix<f64>,
    prices: &[f64],
    demands: &[f64],
    r_hat: &[f64],
    gamma_sq: f64,
) -> LaplaceResult {
    let n = prices.len();
    if gamma_sq == 0.0 {
        let evidence = (0..n).map(|i| bernoulli_loglik(r_hat[i], prices[i], demands[i]).0).sum();
        return LaplaceResult {
            evidence,
            mode: r_hat.to_vec(),
            iterations: 0,
            converged: true,
            trace: vec![evidence],
        };
    }
    let kk = k * gamma_sq;
    let lik = |f: &DVector<f64>| {
        let mut v = 0.0;
        let mut g = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let (a, b, c) = bernoulli_loglik(r_hat[i] + f[i], prices[i], demands[i]);
            v += a;
            g[i] = b;
            w[i] = -c;
        }
        (v, g, w)
    };
    let factor = |w: &DVector<f64>| {
        let sw = w.map(f64::sqrt);
        let mut b = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] += sw[i] * kk[(i, j)] * sw[j];
            }
        }
        (sw, b.cholesky().expect("I + W½KW½ is positive definite"))
    };

    let mut a = DVector::zeros(n);
    let mut f = DVector::zeros(n);
    let (mut psi, mut grad, mut w) = lik(&f);
    let mut trace = vec![psi];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < NEWTON_MAX_ITERS {
        let resid = &grad - &a;
        if resid.amax() <= NEWTON_GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let (sw, chol) = factor(&w);
        let b = w.component_mul(&f) + &grad;
        let v = sw.component_mul(&(&kk * &b));
        let a_new = &b - sw.component_mul(&chol.solve(&v));
        let da = a_new - &a;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let a_t = &a + &da * step;
            let f_t = &kk * &a_t;
            let (lv_t, g_t, w_t) = lik(&f_t);
            let psi_t = lv_t - 0.5 * a_t.dot(&f_t);
            if psi_t > psi {
                a = a_t;
                f = f_t;
                grad = g_t;
                w = w_t;
                psi = psi_t;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no representable improvement left
            converged = (&grad - &a).amax() <= 1e-6 * (1.0 + grad.amax());
            break;
        }
        trace.push(psi);
    }
    let (_, chol) = factor(&w);
    let half_log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
    LaplaceResult {
        evidence: if converged { psi - half_log_det } else { f64::NEG_INFINITY },
        mode: (0..n).map(|i| r_hat[i] + f[i]).collect(),
        iterations,
        converged,
        trace,
    }
}

// ── Fitting ─────────────────────────────────────────────────────────────

/// Logged half of an instance, as seen by the evidence.
#[derive(Debug, Clone)]
pub struct EvidenceProblem {
    points: Vec<Vec<f64>>,
    prices: Vec<f64>,
    demands: Vec<f64>,
    revenue: Vec<f64>,
    r_hat: Vec<f64>,
}

impl EvidenceProblem {
    pub fn new(inst: &EvaluationInstance, r_hat_logged: &[f64]) -> Result<Self, HyperfitError> {
        let n = inst.n();
        if r_hat_logged.len() != n {
            return Err(HyperfitError::Length {
                got: r_hat_logged.len(),
                expected: n,
            });
        }
        let prices = inst.logged_prices().to_vec();
        let demands = inst.demands().to_vec();
        Ok(Self {
            points: inst.kernel_points()[..n].to_vec(),
            revenue: prices.iter().zip(&demands).map(|(p, d)| p * d).collect(),
            prices,
            demands,
            r_hat: r_hat_logged.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.prices.len()
    }

    pub fn point_dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn kernel(&self, lengthscale_sq: &[f64]) -> Result<DMatrix<f64>, HyperfitError> {
        let cfg = KernelConfig::new(lengthscale_sq.to_vec(), 0.0)?;
        Ok(kernel_matrix(&self.points, &cfg)?)
    }

    /// `R − r̂` on the logged points.
    pub fn residual(&self) -> Vec<f64> {
        self.revenue.iter().zip(&self.r_hat).map(|(a, b)| a - b).collect()
    }

    pub fn evidence(&self, variant: LikelihoodVariant, hp: &HyperParams) -> Result<f64, HyperfitError> {
        hp.validate(variant)?;
        let k = self.kernel(&hp.lengthscale_sq)?;
        Ok(match variant {
            LikelihoodVariant::Gaussian => {
                gaussian_evidence(&k, &self.residual(), hp.gamma_hat_sq, hp.sigma_sq.expect("validated"))?
            }
            LikelihoodVariant::Bernoulli => {
                bernoulli_laplace_evidence(&k, &self.prices, &self.demands, &self.r_hat, hp.gamma_hat_sq).evidence
            }
        })
    }

    /// Median squared pairwise distance per input dimension (1 where it vanishes).
    pub fn median_heuristic(&self) -> Vec<f64> {
        let n = self.n();
        (0..self.point_dim())
            .map(|d| {
                let mut sq: Vec<f64> = (0..n)
                    .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                    .map(|(i, j)| (self.points[i][d] - self.points[j][d]).powi(2))
                    .collect();
                if sq.is_empty() {
                    return 1.0;
                }
                sq.sort_by(f64::total_cmp);
                let m = sq.len();
                let med = if m % 2 == 1 { sq[m / 2] } else { 0.5 * (sq[m / 2 - 1] + sq[m / 2]) };
                if med > 0.0 { med } else { 1.0 }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitOptions {
    /// Evidence evaluations per restart; [`DEFAULT_BUDGET`] when zero.
    pub budget: usize,
    /// Candidates tried as additional restarts.
    pub extra_starts: Vec<HyperParams>,
}

struct Layout {
    dims: usize,
    gaussian: bool,
}

impl Layout {
    fn clamp(&self, theta: &mut [f64]) {
        for (k, t) in theta.iter_mut().enumerate() {
            let (lo, hi) = if k < self.dims {
                LOG_LENGTHSCALE_SQ
            } else if k == self.dims {
                LOG_GAMMA_SQ
            } else {
                LOG_SIGMA_SQ
            };
            *t = t.clamp(lo, hi);
        }
    }

    fn encode(&self, hp: &HyperParams) -> Vec<f64> {
        let mut theta: Vec<f64> = hp.lengthscale_sq.iter().map(|v| v.ln()).collect();
        theta.push(hp.gamma_hat_sq.max(1e-300).ln());
        if self.gaussian {
            theta.push(hp.sigma_sq.unwrap_or(1.0).ln());
        }
        self.clamp(&mut theta);
        theta
    }

    fn decode(&self, theta: &[f64], evidence: f64) -> HyperParams {
        HyperParams {
            lengthscale_sq: theta[..self.dims].iter().map(|v| v.exp()).collect(),
            gamma_hat_sq: theta[self.dims].exp(),
            sigma_sq: self.gaussian.then(|| theta[self.dims + 1].exp()),
            evidence,
        }
    }
}

/// Maximizes the chosen evidence by Nelder–Mead in log space, restarted from
/// unit, median-heuristic and ten-times-median lengthscales (plus any
/// `extra_starts`). Deterministic.
pub fn fit_hyperparams(
    variant: LikelihoodVariant,
    inst: &EvaluationInstance,
    r_hat_logged: &[f64],
    opts: &FitOptions,
) -> Result<HyperParams, HyperfitError> {
    let problem = EvidenceProblem::new(inst, r_hat_logged)?;
    let layout = Layout {
        dims: problem.point_dim(),
        gaussian: variant == LikelihoodVariant::Gaussian,
    };
    let budget = if opts.budget == 0 { DEFAULT_BUDGET } else { opts.budget };

    let resid = problem.residual();
    let m = resid.iter().sum::<f64>() / resid.len() as f64;
    let var = resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / resid.len() as f64;
    let scale = (var / 2.0).max(1e-6);
    let median = problem.median_heuristic();
    let mut starts: Vec<HyperParams> = [vec![1.0; layout.dims], median.clone(), median.iter().map(|v| 10.0 * v).collect()]
        .into_iter()
        .map(|ls| HyperParams {
            lengthscale_sq: ls,
            gamma_hat_sq: scale,
            sigma_sq: layout.gaussian.then_some(scale),
            evidence: f64::NEG_INFINITY,
        })
        .collect();
    starts.extend(opts.extra_starts.iter().cloned());

    let cost = |theta: &[f64]| -> f64 {
        let hp = layout.decode(theta, f64::NEG_INFINITY);
        match problem.evidence(variant, &hp) {
            Ok(e) if e.is_finite() => -e,
            _ => f64::INFINITY,
        }
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        if start.lengthscale_sq.len() != layout.dims {
            return Err(HyperfitError::Invalid(format!(
                "start has {} lengthscales, expected {}",
                start.lengthscale_sq.len(),
                layout.dims
            )));
        }
        let x0 = layout.encode(start);
        let (x, fx) = nelder_mead(&cost, x0, budget, |t| layout.clamp(t));
        if best.as_ref().is_none_or(|(_, b)| fx < *b) {
            best = Some((x, fx));
        }
    }
    let (theta, fx) = best.expect("at least one start");
    Ok(layout.decode(&theta, -fx))
}

/// Minimizes `f` from `x0` with unit log-space initial steps, projecting every
/// vertex through `clamp`. Returns the best vertex and its value.
fn nelder_mead<F, C>(f: &F, x0: Vec<f64>, budget: usize, clamp: C) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&mut [f64]),
{
    let dim = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(&x0);
    simplex.push((x0.clone(), v0));
    for k in 0..dim {
        let mut x = x0.clone();
        x[k] += 1.0;
        clamp(&mut x);
        if x == x0 {
            x[k] -= 2.0;
            clamp(&mut x);
        }
        let v = eval(&x);
        simplex.push((x, v));
    }

    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    let point = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        let mut x: Vec<f64> = c.iter().zip(w).map(|(c, w)| c + t * (w - c)).collect();
        clamp(&mut x);
        x
    };

    while evals.get() + 2 <= budget {
        let spread = simplex[dim].1 - simplex[0].1;
        if spread.is_finite() && spread.abs() <= 1e-10 * (1.0 + simplex[0].1.abs()) {
            let size = simplex
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if size < 1e-8 {
                break;
            }
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|(x, _)| x[k]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let xr = point(&centroid, &worst.0, -1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = point(&centroid, &worst.0, -2.0);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = point(&centroid, &xr, 0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = point(&centroid, &worst.0, 0.5);
                let v = eval(&x);
                (x, v)
            };
            if fc < worst.1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x = point(&best, &v.0, 0.5);
                    v.1 = eval(&x);
                    v.0 = x;
                }
            }
        }
        order(&mut simplex);
    }
    simplex.swap_remove(0)
}
