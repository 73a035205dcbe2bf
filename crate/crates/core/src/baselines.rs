//! Comparison estimators: an ℓ₁-penalized linear demand model for the
//! reference revenue, the homoscedastic balancing weights, and inverse
//! propensity weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EvaluationInstance, PricingDataset};
use crate::estimator::Weights;
use crate::kernel::GramFactorization;

const CD_TOL: f64 = 1e-8;
const CD_MAX_SWEEPS: usize = 10_000;
pub const CV_FOLDS: usize = 5;
pub const CV_GRID: usize = 20;
/// Smallest penalty on the CV grid, relative to the full-shrinkage penalty.
pub const CV_MIN_RATIO: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("need at least 2 logged points, got {0}")]
    TooFewPoints(usize),

    #[error("l1 penalty must be finite and non-negative, got {0}")]
    InvalidPenalty(f64),

    #[error("sigma² must be finite and positive, got {0}")]
    InvalidSigma(f64),

    #[error("gamma must be finite and non-negative, got {0}")]
    InvalidGamma(f64),

    #[error("Gram matrix has dimension {got}, expected {expected}")]
    GramDimension { got: usize, expected: usize },

    #[error("logging density is zero at logged point {index} where the target density is positive")]
    ZeroPropensity { index: usize },

    #[error("density at logged point {index} is not a finite non-negative number")]
    InvalidDensity { index: usize },
}

// ── LASSO ───────────────────────────────────────────────────────────────

/// Linear demand model `d̂(x, p)` fit on standardized features and price.
/// `coefficients` holds the standardized slopes (features, then price)
/// followed by the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub coefficients: Vec<f64>,
    pub l1_penalty: f64,
    pub column_mean: Vec<f64>,
    pub column_scale: Vec<f64>,
}

impl LassoModel {
    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[..self.coefficients.len() - 1]
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[self.coefficients.len() - 1]
    }

    /// Unclipped demand prediction.
    pub fn predict(&self, x: &[f64], price: f64) -> f64 {
        let d = x.len();
        let mut out = self.intercept();
        for (j, beta) in self.slopes().iter().enumerate() {
            let v = if j < d { x[j] } else { price };
            out += beta * (v - self.column_mean[j]) / self.column_scale[j];
        }
        out
    }
}

/// Column `j < d` is feature `j`, column `d` is the logged price.
fn design(ds: &PricingDataset) -> Vec<Vec<f64>> {
    let d = ds.dim();
    (0..=d)
        .map(|j| {
            if j < d {
                ds.features().iter().map(|x| x[j]).collect()
            } else {
                ds.logged_prices().to_vec()
            }
        })
        .collect()
}

fn standardize(columns: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut means = Vec::with_capacity(columns.len());
    let mut scales = Vec::with_capacity(columns.len());
    let std_cols = columns
        .iter()
        .map(|c| {
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            let s = if sd > 1e-12 * (1.0 + m.abs()) { sd } else { 1.0 };
            means.push(m);
            scales.push(s);
            c.iter().map(|v| (v - m) / s).collect()
        })
        .collect();
    (std_cols, means, scales)
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `(1/2n)‖D − d̂‖² + λ‖slopes‖₁` on the dataset's logged points.
pub fn lasso_objective(model: &LassoModel, ds: &PricingDataset) -> f64 {
    let n = ds.n() as f64;
    let rss: f64 = (0..ds.n())
        .map(|i| (ds.demands()[i] - model.predict(&ds.features()[i], ds.logged_prices()[i])).powi(2))
        .sum();
    rss / (2.0 * n) + model.l1_penalty * model.slopes().iter().map(|b| b.abs()).sum::<f64>()
}

/// Penalty above which every slope is zero.
pub fn lasso_lambda_max(ds: &PricingDataset) -> f64 {
    let (cols, _, _) = standardize(&design(ds));
    let n = ds.n() as f64;
    let mean_d = ds.demands().iter().sum::<f64>() / n;
    cols.iter()
        .map(|c| {
            c.iter()
                .zip(ds.demands())
                .map(|(x, d)| x * (d - mean_d))
                .sum::<f64>()
                .abs()
                / n
        })
        .fold(0.0, f64::max)
}

fn coordinate_descent(ds: &PricingDataset, l1: f64, mut trace: Option<&mut Vec<f64>>) -> LassoModel {
    let n = ds.n();
    let nf = n as f64;
    let (cols, means, scales) = standardize(&design(ds));
    let p = cols.len();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut beta = vec![0.0; p];
    let mut intercept = ds.demands().iter().sum::<f64>() / nf;
    let mut resid: Vec<f64> = ds.demands().iter().map(|d| d - intercept).collect();

    for _ in 0..CD_MAX_SWEEPS {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let rho = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / nf + norms[j] * beta[j];
            let new = soft_threshold(rho, l1) / norms[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, x) in resid.iter_mut().zip(col) {
                    *r -= delta * x;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let shift = resid.iter().sum::<f64>() / nf;
        if shift != 0.0 {
            intercept += shift;
            resid.iter_mut().for_each(|r| *r -= shift);
            max_delta = max_delta.max(shift.abs());
        }
        if let Some(t) = trace.as_deref_mut() {
            let rss: f64 = resid.iter().map(|r| r * r).sum();
            t.push(rss / (2.0 * nf) + l1 * beta.iter().map(|b| b.abs()).sum::<f64>());
        }
        if max_delta < CD_TOL {
            break;
        }
    }
    beta.push(intercept);
    LassoModel {
        coefficients: beta,
        l1_penalty: l1,
        column_mean: means,
        column_scale: scales,
    }
}

fn check_lasso_inputs(ds: &PricingDataset, l1: f64) -> Result<(), BaselineError> {
    if ds.n() < 2 {
        return Err(BaselineError::TooFewPoints(ds.n()));
    }
    if !(l1.is_finite() && l1 >= 0.0) {
        return Err(BaselineError::InvalidPenalty(l1));
    }
    Ok(())
}

/// Coordinate-descent LASSO of demand on standardized features and price.
pub fn fit_lasso(ds: &PricingDataset, l1_penalty: f64) -> Result<LassoModel, BaselineError> {
    check_lasso_inputs(ds, l1_penalty)?;
    Ok(coordinate_descent(ds, l1_penalty, None))
}

/// As [`fit_lasso`], also returning the objective after every sweep.
pub fn fit_lasso_traced(ds: &PricingDataset, l1_penalty: f64) -> Result<(LassoModel, Vec<f64>), BaselineError> {
    check_lasso_inputs(ds, l1_penalty)?;
    let mut trace = Vec::new();
    let model = coordinate_descent(ds, l1_penalty, Some(&mut trace));
    Ok((model, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoCv {
    pub model: LassoModel,
    pub penalties: Vec<f64>,
    /// Mean held-out squared error of the clipped prediction, per penalty.
    pub cv_error: Vec<f64>,
}

/// Picks the penalty by `CV_FOLDS`-fold cross-validation (point `i` in fold
/// `i mod k`) over `CV_GRID` log-spaced values from the full-shrinkage
/// penalty down to `CV_MIN_RATIO` of it, then refits on all points. Ties go
/// to the larger penalty.
pub fn fit_lasso_cv(ds: &PricingDataset) -> Result<LassoCv, BaselineError> {
    let n = ds.n();
    if n < 2 {
        return Err(BaselineError::TooFewPoints(n));
    }
    let folds = CV_FOLDS.min(n);
    let lam_max = lasso_lambda_max(ds);
    let penalties: Vec<f64> = if lam_max > 0.0 {
        (0..CV_GRID)
            .map(|k| lam_max * CV_MIN_RATIO.powf(k as f64 / (CV_GRID - 1) as f64))
            .collect()
    } else {
        vec![0.0]
    };

    let split = |fold: usize| -> Option<(PricingDataset, Vec<usize>)> {
        let train: Vec<usize> = (0..n).filter(|i| i % folds != fold).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % folds == fold).collect();
        if train.len() < 2 {
            return None;
        }
        let sub = PricingDataset::new(
            train.iter().map(|&i| ds.features()[i].clone()).collect(),
            train.iter().map(|&i| ds.logged_prices()[i]).collect(),
            train.iter().map(|&i| ds.demands()[i]).collect(),
        )
        .expect("subset of a valid dataset");
        Some((sub, test))
    };
    let splits: Vec<_> = (0..folds).filter_map(split).collect();

    let cv_error: Vec<f64> = penalties
        .iter()
        .map(|&lam| {
            let mut err = 0.0;
            let mut count = 0usize;
            for (train, test) in &splits {
                let m = coordinate_descent(train, lam, None);
                for &i in test {
                    let pred = m.predict(&ds.features()[i], ds.logged_prices()[i]).clamp(0.0, 1.0);
                    err += (ds.demands()[i] - pred).powi(2);
                    count += 1;
                }
            }
            if count == 0 { 0.0 } else { err / count as f64 }
        })
        .collect();
    let best = cv_error
        .iter()
        .enumerate()
        .fold(0, |best, (k, e)| if *e < cv_error[best] { k } else { best });
    Ok(LassoCv {
        model: coordinate_descent(ds, penalties[best], None),
        penalties,
        cv_error,
    })
}

/// `r̂ᵢ = pᵢ·clip(d̂(xᵢ, pᵢ), 0, 1)` over all `2n` points.
pub fn reference_revenue(model: &LassoModel, inst: &EvaluationInstance) -> Vec<f64> {
    let n = inst.n();
    inst.price_vector()
        .iter()
        .enumerate()
        .map(|(k, &p)| p * model.predict(inst.features(k % n), p).clamp(0.0, 1.0))
        .collect()
}

// ── Homoscedastic balancing ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BopeConfig {
    pub sigma_sq: f64,
}

impl BopeConfig {
    pub fn new(sigma_sq: f64) -> Result<Self, BaselineError> {
        if !(sigma_sq.is_finite() && sigma_sq > 0.0) {
            return Err(BaselineError::InvalidSigma(sigma_sq));
        }
        Ok(Self { sigma_sq })
    }
}

/// `Γ̂²·b(w)ᵀGb(w) + (σ²/n²)‖w‖²`, the homoscedastic worst case without the box.
pub fn bope_objective(w: &Weights, gf: &GramFactorization, gamma_hat: f64, cfg: &BopeConfig) -> f64 {
    let n = w.len() as f64;
    let b = DVector::from_vec(w.bias_vector());
    let quad = b.dot(&(gf.gram() * &b));
    gamma_hat * gamma_hat * quad + cfg.sigma_sq / (n * n) * w.as_slice().iter().map(|v| v * v).sum::<f64>()
}

/// Minimizer of [`bope_objective`]: `(Γ̂²G₁₁ + σ²I)w = Γ̂²G₁₂𝟏`.
pub fn bope_weights(
    inst: &EvaluationInstance,
    gf: &GramFactorization,
    gamma_hat: f64,
    cfg: &BopeConfig,
) -> Result<Weights, BaselineError> {
    let n = inst.n();
    if gf.dim() != 2 * n {
        return Err(BaselineError::GramDimension {
            got: gf.dim(),
            expected: 2 * n,
        });
    }
    if !(gamma_hat.is_finite() && gamma_hat >= 0.0) {
        return Err(BaselineError::InvalidGamma(gamma_hat));
    }
    BopeConfig::new(cfg.sigma_sq)?;
    let g = gf.gram();
    let g2 = gamma_hat * gamma_hat;
    let mut a: DMatrix<f64> = g.view((0, 0), (n, n)) * g2;
    for i in 0..n {
        a[(i, i)] += cfg.sigma_sq;
    }
    let rhs = DVector::from_fn(n, |i, _| g2 * (n..2 * n).map(|j| g[(i, j)]).sum::<f64>());
    let w = a
        .cholesky()
        .expect("Γ̂²G₁₁ + σ²I is positive definite")
        .solve(&rhs);
    Ok(Weights::new(w.iter().copied().collect()).expect("finite solution"))
}

// ── Inverse propensity ──────────────────────────────────────────────────

/// `Wᵢ = g₁(Pᵢ, xᵢ) / g₀(Pᵢ, xᵢ)` at every logged point, used directly as `w`.
pub fn ip_weights<G0, G1>(inst: &EvaluationInstance, g0: G0, g1: G1) -> Result<Weights, BaselineError>
where
    G0: Fn(&[f64], f64) -> f64,
    G1: Fn(&[f64], f64) -> f64,
{
    let w = (0..inst.n())
        .map(|i| {
            let x = inst.features(i);
            let p = inst.logged_prices()[i];
            let (d0, d1) = (g0(x, p), g1(x, p));
            if !(d0.is_finite() && d0 >= 0.0 && d1.is_finite() && d1 >= 0.0) {
                return Err(BaselineError::InvalidDensity { index: i });
            }
            match (d0 > 0.0, d1 > 0.0) {
                (true, _) => Ok(d1 / d0),
                (false, false) => Ok(0.0),
                (false, true) => Err(BaselineError::ZeroPropensity { index: i }),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Weights::new(w).expect("finite ratios"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{TargetPolicySpec, apply_target_policy};
    use crate::kernel::{KernelConfig, gram_matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize) -> PricingDataset {
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let prices: Vec<f64> = (0..n).map(|_| rng.random_range(3.0..10.0)).collect();
        let demands = features
            .iter()
            .zip(&prices)
            .map(|(x, p)| {
                let q = 0.9 - 0.07 * p + 0.2 * x[0];
                if rng.random::<f64>() < q { 1.0 } else { 0.0 }
            })
            .collect();
        PricingDataset::new(features, prices, demands).unwrap()
    }

    /// Independent ISTA on the same standardized problem.
    fn ista_objective(ds: &PricingDataset, l1: f64) -> f64 {
        let n = ds.n();
        let nf = n as f64;
        let d = ds.dim();
        let mut cols: Vec<Vec<f64>> = (0..d)
            .map(|j| ds.features().iter().map(|x| x[j]).collect())
            .collect();
        cols.push(ds.logged_prices().to_vec());
        for c in &mut cols {
            let m = c.iter().sum::<f64>() / nf;
            let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf).sqrt();
            c.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        let p = cols.len();
        let mut beta = vec![0.0; p];
        let mut b0 = 0.0;
        let step = 1.0 / (p as f64 + 1.0);
        let resid = |beta: &[f64], b0: f64| -> Vec<f64> {
            (0..n)
                .map(|i| ds.demands()[i] - b0 - (0..p).map(|j| beta[j] * cols[j][i]).sum::<f64>())
                .collect()
        };
        for _ in 0..200_000 {
            let r = resid(&beta, b0);
            b0 += step * r.iter().sum::<f64>() / nf;
            for j in 0..p {
                let g = -cols[j].iter().zip(&r).map(|(x, r)| x * r).sum::<f64>() / nf;
                beta[j] = soft_threshold(beta[j] - step * g, step * l1);
            }
        }
        let r = resid(&beta, b0);
        r.iter().map(|v| v * v).sum::<f64>() / (2.0 * nf) + l1 * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    #[test]
    fn constant_demand_gives_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = random_dataset(&mut rng, 30);
        let ds = ds.with_demands(vec![1.0; 30]).unwrap();
        let m = fit_lasso(&ds, 0.01).unwrap();
        assert!((m.intercept() - 1.0).abs() < 1e-12);
        assert!(m.slopes().iter().all(|b| *b == 0.0));
    }

    #[test]
    fn full_shrinkage_above_lambda_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = random_dataset(&mut rng, 40);
        let lam = lasso_lambda_max(&ds);
        assert!(lam > 0.0);
        let m = fit_lasso(&ds, lam * 1.0001).unwrap();
        assert!(m.slopes().iter().all(|b| *b == 0.0));
        let m = fit_lasso(&ds, lam * 0.5).unwrap();
        assert!(m.slopes().iter().any(|b| *b != 0.0));
    }

    #[test]
    fn matches_proximal_gradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for l1 in [0.0, 0.005, 0.03] {
            let ds = random_dataset(&mut rng, 25);
            let m = fit_lasso(&ds, l1).unwrap();
            let ours = lasso_objective(&m, &ds);
            let oracle = ista_objective(&ds, l1);
            assert!((ours - oracle).abs() < 1e-6, "λ={l1}: {ours} vs {oracle}");
        }
    }

    #[test]
    fn sweeps_never_increase_the_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = random_dataset(&mut rng, 50);
        let (m, trace) = fit_lasso_traced(&ds, 0.002).unwrap();
        assert!(!trace.is_empty());
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
        assert!((trace[trace.len() - 1] - lasso_objective(&m, &ds)).abs() < 1e-10);
    }

    #[test]
    fn lasso_input_validation() {
        let ds = PricingDataset::new(vec![vec![0.0]], vec![1.0], vec![1.0]).unwrap();
        assert_eq!(fit_lasso(&ds, 0.1).unwrap_err(), BaselineError::TooFewPoints(1));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_dataset(&mut rng, 5);
        assert!(matches!(fit_lasso(&ds, -1.0), Err(BaselineError::InvalidPenalty(_))));
    }

    #[test]
    fn cross_validation_is_deterministic_and_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = random_dataset(&mut rng, 60);
        let a = fit_lasso_cv(&ds).unwrap();
        let b = fit_lasso_cv(&ds).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.penalties.len(), CV_GRID);
        assert!(a.penalties.contains(&a.model.l1_penalty));
        let k = a.penalties.iter().position(|p| *p == a.model.l1_penalty).unwrap();
        assert!(a.cv_error.iter().all(|e| *e >= a.cv_error[k]));
    }

    fn model_with_intercept(c: f64) -> LassoModel {
        LassoModel {
            coefficients: vec![0.0, 0.0, c],
            l1_penalty: 0.0,
            column_mean: vec![0.0, 0.0],
            column_scale: vec![1.0, 1.0],
        }
    }

    #[test]
    fn reference_revenue_clips_demand() {
        let ds = PricingDataset::new(vec![vec![0.0]], vec![4.0], vec![1.0]).unwrap();
        let inst = apply_target_policy(&ds, &TargetPolicySpec::Explicit { prices: vec![4.0] }).unwrap();
        assert_eq!(reference_revenue(&model_with_intercept(0.5), &inst), vec![2.0, 2.0]);
        assert_eq!(reference_revenue(&model_with_intercept(-0.2), &inst), vec![0.0, 0.0]);
        assert_eq!(reference_revenue(&model_with_intercept(1.3), &inst), vec![4.0, 4.0]);
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (EvaluationInstance, GramFactorization) {
        let ds = random_dataset(rng, n);
        let targets = (0..n).map(|_| rng.random_range(2.0..8.0)).collect();
        let inst = apply_target_policy(&ds, &TargetPolicySpec::Explicit { prices: targets }).unwrap();
        let gf = gram_matrix(&inst, &KernelConfig::isotropic(3)).unwrap();
        (inst, gf)
    }

    fn bope_gradient(w: &Weights, gf: &GramFactorization, gamma: f64, sigma_sq: f64) -> Vec<f64> {
        let n = w.len();
        let nf = n as f64;
        let b = DVector::from_vec(w.bias_vector());
        let gb = gf.gram() * &b;
        (0..n)
            .map(|i| 2.0 * gamma * gamma * gb[i] / nf + 2.0 * sigma_sq * w.as_slice()[i] / (nf * nf))
            .collect()
    }

    #[test]
    fn bope_zero_radius_gives_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (inst, gf) = random_instance(&mut rng, 8);
        let w = bope_weights(&inst, &gf, 0.0, &BopeConfig::new(1.0).unwrap()).unwrap();
        assert!(w.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bope_is_stationary_and_matches_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (inst, gf) = random_instance(&mut rng, 10);
        let cfg = BopeConfig::new(0.7).unwrap();
        let gamma = 1.3;
        let w = bope_weights(&inst, &gf, gamma, &cfg).unwrap();
        let g = bope_gradient(&w, &gf, gamma, cfg.sigma_sq);
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");

        let mut x = vec![0.0; 10];
        let step = 1.0;
        for _ in 0..50_000 {
            let gx = bope_gradient(&Weights::new(x.clone()).unwrap(), &gf, gamma, cfg.sigma_sq);
            x.iter_mut().zip(&gx).for_each(|(a, b)| *a -= step * b);
        }
        let xw = Weights::new(x).unwrap();
        let ours = bope_objective(&w, &gf, gamma, &cfg);
        let oracle = bope_objective(&xw, &gf, gamma, &cfg);
        assert!(ours <= oracle + 1e-12);
        assert!((ours - oracle).abs() < 1e-6);
    }

    #[test]
    fn bope_norm_shrinks_with_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (inst, gf) = random_instance(&mut rng, 12);
        let mut prev = f64::INFINITY;
        for s in [0.01, 0.1, 1.0, 10.0, 100.0, 1e4] {
            let w = bope_weights(&inst, &gf, 1.0, &BopeConfig::new(s).unwrap()).unwrap();
            let norm = w.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < prev);
            prev = norm;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn bope_rejects_bad_inputs() {
        assert!(BopeConfig::new(0.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (inst, _) = random_instance(&mut rng, 4);
        let (_, other) = random_instance(&mut rng, 5);
        let err = bope_weights(&inst, &other, 1.0, &BopeConfig::new(1.0).unwrap()).unwrap_err();
        assert_eq!(err, BaselineError::GramDimension { got: 10, expected: 8 });
    }

    fn gaussian(mean: f64) -> impl Fn(&[f64], f64) -> f64 {
        move |_: &[f64], p: f64| (-(p - mean).powi(2) / 8.0).exp() / (2.0 * (2.0 * std::f64::consts::PI).sqrt())
    }

    #[test]
    fn ip_weight_cases() {
        let ds = PricingDataset::new(vec![vec![0.0], vec![1.0]], vec![5.5, 3.0], vec![1.0, 0.0]).unwrap();
        let inst = apply_target_policy(&ds, &TargetPolicySpec::Multiplicative { factor: 1.0 }).unwrap();
        let w = ip_weights(&inst, gaussian(7.0), gaussian(7.0)).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0]);
        let w = ip_weights(&inst, gaussian(7.0), gaussian(4.0)).unwrap();
        assert!((w.as_slice()[0] - 1.0).abs() < 1e-14);
        let expected = ((-(3.0f64 - 4.0).powi(2) + (3.0f64 - 7.0).powi(2)) / 8.0).exp();
        assert!((w.as_slice()[1] - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn ip_weights_need_overlap() {
        let ds = PricingDataset::new(vec![vec![0.0], vec![1.0]], vec![5.5, 3.0], vec![1.0, 0.0]).unwrap();
        let inst = apply_target_policy(&ds, &TargetPolicySpec::Multiplicative { factor: 1.0 }).unwrap();
        let g0 = |_: &[f64], p: f64| if p > 4.0 { 1.0 } else { 0.0 };
        let err = ip_weights(&inst, g0, |_: &[f64], _: f64| 1.0).unwrap_err();
        assert_eq!(err, BaselineError::ZeroPropensity { index: 1 });
        let w = ip_weights(&inst, g0, g0).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
    }
}
