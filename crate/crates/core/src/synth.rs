//! Synthetic pricing worlds with known demand, and the Monte-Carlo
//! bias²/variance/MSE harness.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalDist};
use thiserror::Error;

use crate::data::{DataError, EvaluationInstance, PricingDataset};
use crate::rng;

const FEATURE_DIM: usize = 2;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("demand model returned {value} at probe {index}, outside [0, 1]")]
    DemandOutOfRange { index: usize, value: f64 },

    #[error("policy noise sd must be finite and non-negative, got {0}")]
    InvalidNoise(f64),

    #[error("policy coefficient length {got} does not match feature dimension {expected}")]
    CoefLength { got: usize, expected: usize },

    #[error("could not draw a positive price from mean {mean} after {MAX_RESAMPLES} attempts")]
    NoPositivePrice { mean: f64 },

    #[error("density requires a positive noise sd")]
    DegenerateDensity,

    #[error("need at least {min} {what}, got {got}")]
    TooFew { what: &'static str, got: usize, min: usize },

    #[error(transparent)]
    Data(#[from] DataError),
}

fn sigmoid(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

// ── Demand ──────────────────────────────────────────────────────────────

/// Purchase probability as a function of features and price.
pub trait DemandModel: Send + Sync {
    fn demand(&self, x: &[f64], price: f64) -> f64;
}

impl<F: Fn(&[f64], f64) -> f64 + Send + Sync> DemandModel for F {
    fn demand(&self, x: &[f64], price: f64) -> f64 {
        self(x, price)
    }
}

/// `¼ + ¾σ(5 − p/2 − (x₂ − x₁))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SettingADemand;

impl DemandModel for SettingADemand {
    fn demand(&self, x: &[f64], price: f64) -> f64 {
        0.25 + 0.75 * sigmoid(5.0 - 0.5 * price - (x[1] - x[0]))
    }
}

/// `¼ + ¾σ(5 − p/2 − atan2(x₁, x₂))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SettingBDemand;

impl DemandModel for SettingBDemand {
    fn demand(&self, x: &[f64], price: f64) -> f64 {
        0.25 + 0.75 * sigmoid(5.0 - 0.5 * price - x[0].atan2(x[1]))
    }
}

// ── Policies ────────────────────────────────────────────────────────────

/// `P = coefᵀx + intercept + ε`, `ε ~ N(0, noise_sd²)`, resampled until positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianPolicy {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub noise_sd: f64,
}

impl LinearGaussianPolicy {
    pub fn new(coef: Vec<f64>, intercept: f64, noise_sd: f64) -> Result<Self, SynthError> {
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return Err(SynthError::InvalidNoise(noise_sd));
        }
        Ok(Self {
            coef,
            intercept,
            noise_sd,
        })
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// A positive price and the number of rejected draws.
    pub fn sample(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<(f64, usize), SynthError> {
        let mean = self.mean(x);
        if self.noise_sd == 0.0 {
            return if mean > 0.0 {
                Ok((mean, 0))
            } else {
                Err(SynthError::NoPositivePrice { mean })
            };
        }
        let noise = Normal::new(0.0, self.noise_sd).expect("validated sd");
        for rejected in 0..MAX_RESAMPLES {
            let p = mean + noise.sample(rng);
            if p > 0.0 {
                return Ok((p, rejected));
            }
        }
        Err(SynthError::NoPositivePrice { mean })
    }

    /// Density of the price actually drawn by [`sample`](Self::sample), i.e.
    /// the Gaussian truncated to `p > 0`.
    pub fn density(&self, x: &[f64], price: f64) -> Result<f64, SynthError> {
        if self.noise_sd == 0.0 {
            return Err(SynthError::DegenerateDensity);
        }
        if price <= 0.0 {
            return Ok(0.0);
        }
        let dist = NormalDist::new(self.mean(x), self.noise_sd).expect("validated sd");
        Ok(dist.pdf(price) / dist.sf(0.0))
    }

    /// Density of the untruncated Gaussian.
    pub fn gaussian_density(&self, x: &[f64], price: f64) -> Result<f64, SynthError> {
        if self.noise_sd == 0.0 {
            return Err(SynthError::DegenerateDensity);
        }
        let dist = NormalDist::new(self.mean(x), self.noise_sd).expect("validated sd");
        Ok(dist.pdf(price))
    }
}

// ── Worlds ──────────────────────────────────────────────────────────────

#[derive(Clone)]
pub struct SyntheticWorld {
    demand: Arc<dyn DemandModel>,
    logging: LinearGaussianPolicy,
    target: LinearGaussianPolicy,
    seed: u64,
}

impl fmt::Debug for SyntheticWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SyntheticWorld")
            .field("logging", &self.logging)
            .field("target", &self.target)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Default policy noise: standard deviation 2.
pub const DEFAULT_NOISE_SD: f64 = 2.0;
pub const LOGGING_INTERCEPT: f64 = 7.0;

impl SyntheticWorld {
    /// Features are uniform on `[−1, 1]²`. The demand model is probed on a
    /// fixed grid and must stay within `[0, 1]`.
    pub fn new(
        demand: Arc<dyn DemandModel>,
        logging: LinearGaussianPolicy,
        target: LinearGaussianPolicy,
        seed: u64,
    ) -> Result<Self, SynthError> {
        for policy in [&logging, &target] {
            if policy.coef.len() != FEATURE_DIM {
                return Err(SynthError::CoefLength {
                    got: policy.coef.len(),
                    expected: FEATURE_DIM,
                });
            }
        }
        let mut probe = rng::stream(0, "demand-probe", 0);
        for index in 0..512 {
            let x = [probe.random_range(-1.0..=1.0), probe.random_range(-1.0..=1.0)];
            let p = probe.random_range(0.0..30.0);
            let value = demand.demand(&x, p);
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::DemandOutOfRange { index, value });
            }
        }
        Ok(Self {
            demand,
            logging,
            target,
            seed,
        })
    }

    pub fn setting_a(b: f64, seed: u64) -> Self {
        Self::with_demand(Arc::new(SettingADemand), b, DEFAULT_NOISE_SD, seed)
            .expect("built-in demand stays in [0, 1]")
    }

    pub fn setting_b(b: f64, seed: u64) -> Self {
        Self::with_demand(Arc::new(SettingBDemand), b, DEFAULT_NOISE_SD, seed)
            .expect("built-in demand stays in [0, 1]")
    }

    /// Logging `½xᵀ[1,−1] + 7 + ε`, target `½xᵀ[1,−1] + b + ε`.
    pub fn with_demand(
        demand: Arc<dyn DemandModel>,
        b: f64,
        noise_sd: f64,
        seed: u64,
    ) -> Result<Self, SynthError> {
        let policy = |intercept| LinearGaussianPolicy::new(vec![0.5, -0.5], intercept, noise_sd);
        Self::new(demand, policy(LOGGING_INTERCEPT)?, policy(b)?, seed)
    }

    pub fn demand(&self, x: &[f64], price: f64) -> f64 {
        self.demand.demand(x, price)
    }

    pub fn logging(&self) -> &LinearGaussianPolicy {
        &self.logging
    }

    pub fn target(&self) -> &LinearGaussianPolicy {
        &self.target
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

pub fn make_setting_a(b: f64, seed: u64) -> SyntheticWorld {
    SyntheticWorld::setting_a(b, seed)
}

pub fn make_setting_b(b: f64, seed: u64) -> SyntheticWorld {
    SyntheticWorld::setting_b(b, seed)
}

// ── Instances ───────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SyntheticDraw {
    pub instance: EvaluationInstance,
    /// `pᵢ·d(xᵢ, pᵢ)` over all `2n` points.
    pub true_r: Vec<f64>,
    /// Rejected non-positive price draws.
    pub truncated: usize,
}

impl SyntheticDraw {
    pub fn true_revenue(&self) -> f64 {
        true_target_revenue(&self.true_r)
    }

    /// Logged-half purchase probabilities.
    pub fn purchase_probabilities(&self) -> Vec<f64> {
        let n = self.instance.n();
        let p = self.instance.price_vector();
        (0..n).map(|i| self.true_r[i] / p[i]).collect()
    }

    /// A fresh Bernoulli demand vector for the logged half.
    pub fn simulate_demands(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.purchase_probabilities()
            .into_iter()
            .map(|q| if rng.random::<f64>() < q { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Features, prices and one demand realization, reproducible from
/// `(world.seed, n)`.
pub fn draw_instance(world: &SyntheticWorld, n: usize) -> Result<SyntheticDraw, SynthError> {
    if n == 0 {
        return Err(SynthError::TooFew { what: "points", got: 0, min: 1 });
    }
    let seed = world.seed;
    let tag = n as u64;
    let mut feat_rng = rng::stream(seed, "features", tag);
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..FEATURE_DIM).map(|_| feat_rng.random_range(-1.0..=1.0)).collect())
        .collect();

    let mut truncated = 0;
    let mut prices = |policy: &LinearGaussianPolicy, name: &str| -> Result<Vec<f64>, SynthError> {
        let mut r = rng::stream(seed, name, tag);
        features
            .iter()
            .map(|x| {
                let (p, k) = policy.sample(x, &mut r)?;
                truncated += k;
                Ok(p)
            })
            .collect()
    };
    let logged = prices(&world.logging, "logged-prices")?;
    let target = prices(&world.target, "target-prices")?;

    let true_r: Vec<f64> = logged
        .iter()
        .chain(&target)
        .enumerate()
        .map(|(k, p)| p * world.demand(&features[k % n], *p))
        .collect();
    let mut demand_rng = rng::stream(seed, "demands", tag);
    let demands = (0..n)
        .map(|i| {
            let q = true_r[i] / logged[i];
            if demand_rng.random::<f64>() < q { 1.0 } else { 0.0 }
        })
        .collect();

    let ds = PricingDataset::new(features, logged, demands)?;
    let instance = EvaluationInstance::new(ds, target)?;
    Ok(SyntheticDraw {
        instance,
        true_r,
        truncated,
    })
}

/// Mean of the target half of `true_r`.
pub fn true_target_revenue(true_r: &[f64]) -> f64 {
    let n = true_r.len() / 2;
    if n == 0 {
        return 0.0;
    }
    true_r[n..].iter().sum::<f64>() / n as f64
}

// ── Monte-Carlo decomposition ───────────────────────────────────────────

/// An estimator with everything that depends on the design already fitted;
/// called once per simulated demand vector.
pub type PreparedEstimator = Box<dyn Fn(&EvaluationInstance) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub method: String,
    pub mse: f64,
    pub bias_sq: f64,
    pub variance: f64,
    /// Mean estimate across seeds and reps.
    pub estimate: f64,
    /// Mean true revenue across seeds.
    pub true_revenue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTable {
    /// Seed-averaged metrics, one row per method in preparation order.
    pub rows: Vec<McRow>,
    /// Per-seed metrics, indexed `[seed][method]`.
    pub per_seed: Vec<Vec<McRow>>,
    pub truncated: usize,
}

/// Plug-in statistics of `estimates` against `truth`; MSE = Bias² + Variance
/// exactly.
pub fn decompose(method: &str, estimates: &[f64], truth: f64) -> McRow {
    let k = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / k;
    let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / k;
    let bias_sq = (mean - truth).powi(2);
    McRow {
        method: method.to_string(),
        mse: bias_sq + variance,
        bias_sq,
        variance,
        estimate: mean,
        true_revenue: truth,
    }
}

/// Runs the protocol for every seed: draw an instance, let `prepare` fit the
/// methods once on it, then evaluate them on `reps` fresh demand vectors.
/// Seeds are spread over `workers` threads; results do not depend on it.
pub fn mc_decomposition<E, P>(
    prepare: P,
    world: &SyntheticWorld,
    n: usize,
    reps: usize,
    seeds: &[u64],
    workers: usize,
) -> Result<McTable, E>
where
    E: From<SynthError> + Send,
    P: Fn(&SyntheticDraw, u64) -> Result<Vec<(String, PreparedEstimator)>, E> + Sync,
{
    if reps < 2 {
        return Err(SynthError::TooFew { what: "reps", got: reps, min: 2 }.into());
    }
    if seeds.is_empty() {
        return Err(SynthError::TooFew { what: "seeds", got: 0, min: 1 }.into());
    }
    let run_seed = |seed: u64| -> Result<(Vec<McRow>, usize), E> {
        let draw = draw_instance(&world.with_seed(seed), n)?;
        let methods = prepare(&draw, seed)?;
        let truth = draw.true_revenue();
        let mut estimates = vec![Vec::with_capacity(reps); methods.len()];
        for rep in 0..reps {
            let mut r = rng::stream(seed, "mc-demands", rep as u64);
            let demands = draw.simulate_demands(&mut r);
            let inst = draw.instance.with_demands(demands).map_err(SynthError::from)?;
            for (k, (_, est)) in methods.iter().enumerate() {
                estimates[k].push(est(&inst));
            }
        }
        let rows = methods
            .iter()
            .zip(&estimates)
            .map(|((name, _), e)| decompose(name, e, truth))
            .collect();
        Ok((rows, draw.truncated))
    };

    let results = parallel_map(seeds, workers, run_seed);
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut truncated = 0;
    for r in results {
        let (rows, t) = r?;
        per_seed.push(rows);
        truncated += t;
    }
    Ok(McTable {
        rows: average_rows(&per_seed),
        per_seed,
        truncated,
    })
}

fn average_rows(per_seed: &[Vec<McRow>]) -> Vec<McRow> {
    let Some(first) = per_seed.first() else {
        return Vec::new();
    };
    let k = per_seed.len() as f64;
    (0..first.len())
        .map(|m| {
            let mean = |f: fn(&McRow) -> f64| per_seed.iter().map(|s| f(&s[m])).sum::<f64>() / k;
            McRow {
                method: first[m].method.clone(),
                mse: mean(|r| r.mse),
                bias_sq: mean(|r| r.bias_sq),
                variance: mean(|r| r.variance),
                estimate: mean(|r| r.estimate),
                true_revenue: mean(|r| r.true_revenue),
            }
        })
        .collect()
}

/// Maps `f` over `items` on up to `workers` scoped threads, keeping input
/// order in the output.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(T) -> R + Sync,
    T: Copy,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(|&t| f(t)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(|&t| f(t)).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn setting_a_demand_values() {
        let d = SettingADemand;
        assert!(close(d.demand(&[0.0, 0.0], 10.0), 0.625, 1e-15));
        assert!(close(d.demand(&[0.0, 0.0], 1e4), 0.25, 1e-12));
        for x in [[-1.0, 1.0], [0.3, -0.2], [1.0, -1.0]] {
            let mut prev = f64::INFINITY;
            for k in 0..200 {
                let v = d.demand(&x, k as f64 * 0.1);
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn setting_b_demand_values() {
        let d = SettingBDemand;
        assert!(close(d.demand(&[0.0, 1.0], 10.0), 0.625, 1e-15));
        assert_eq!(d.demand(&[1.0, 1.0], 6.0), d.demand(&[2.0, 2.0], 6.0));
        let v = d.demand(&[1.0, 0.0], 6.0);
        let expected = 0.25 + 0.75 * sigmoid(5.0 - 3.0 - std::f64::consts::FRAC_PI_2);
        assert!(v.is_finite() && close(v, expected, 1e-15));
    }

    #[test]
    fn out_of_range_demand_is_rejected() {
        let policy = LinearGaussianPolicy::new(vec![0.5, -0.5], 7.0, 2.0).unwrap();
        let bad: Arc<dyn DemandModel> = Arc::new(|_: &[f64], p: f64| p / 10.0);
        let err = SyntheticWorld::new(bad, policy.clone(), policy, 0).unwrap_err();
        assert!(matches!(err, SynthError::DemandOutOfRange { .. }));
    }

    #[test]
    fn noiseless_logging_is_deterministic() {
        let world = SyntheticWorld::with_demand(Arc::new(SettingADemand), 2.0, 0.0, 4).unwrap();
        let draw = draw_instance(&world, 30).unwrap();
        let inst = &draw.instance;
        for i in 0..30 {
            let x = inst.features(i);
            assert!(close(inst.logged_prices()[i], 0.5 * (x[0] - x[1]) + 7.0, 1e-12));
        }
        assert_eq!(draw.truncated, 0);
    }

    #[test]
    fn true_revenue_ratio_is_in_demand_range() {
        for world in [make_setting_a(2.0, 3), make_setting_b(3.0, 3)] {
            let draw = draw_instance(&world, 100).unwrap();
            for (r, p) in draw.true_r.iter().zip(draw.instance.price_vector()) {
                let q = r / p;
                assert!((0.25..=1.0).contains(&q), "{q}");
            }
            assert!(draw.instance.price_vector().iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn draws_are_reproducible_and_seed_dependent() {
        let a = draw_instance(&make_setting_a(2.0, 11), 20).unwrap();
        let b = draw_instance(&make_setting_a(2.0, 11), 20).unwrap();
        assert_eq!(a.true_r, b.true_r);
        assert_eq!(a.instance.demands(), b.instance.demands());
        let mut seen = std::collections::HashSet::new();
        for seed in 0..50 {
            let d = draw_instance(&make_setting_a(2.0, seed), 5).unwrap();
            let key: Vec<u64> = d.instance.price_vector().iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(key));
        }
    }

    #[test]
    fn low_target_intercept_triggers_truncation() {
        let draw = draw_instance(&make_setting_a(0.5, 1), 200).unwrap();
        assert!(draw.truncated > 0);
        assert!(draw.instance.target_prices().iter().all(|p| *p > 0.0));
    }

    #[test]
    fn target_revenue_is_target_half_mean() {
        assert_eq!(true_target_revenue(&[1.0, 2.0, 3.0, 5.0]), 4.0);
        assert_eq!(true_target_revenue(&[0.0; 6]), 0.0);
    }

    #[test]
    fn truncated_density_integrates_to_one() {
        let policy = LinearGaussianPolicy::new(vec![0.5, -0.5], 1.0, 2.0).unwrap();
        let x = [0.2, -0.4];
        let h = 1e-3;
        let mass: f64 = (0..30_000).map(|k| policy.density(&x, (k as f64 + 0.5) * h).unwrap() * h).sum();
        assert!(close(mass, 1.0, 1e-5), "{mass}");
        assert_eq!(policy.density(&x, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn decomposition_is_exact_under_plug_in() {
        let row = decompose("m", &[1.0, 2.0, 4.0], 3.0);
        assert!(close(row.mse, row.bias_sq + row.variance, 1e-15));
        let direct = [4.0, 1.0, 1.0].iter().sum::<f64>() / 3.0;
        assert!(close(row.mse, direct, 1e-12));
    }

    #[test]
    fn oracle_and_deterministic_worlds() {
        let world = make_setting_a(2.0, 0);
        let table = mc_decomposition::<SynthError, _>(
            |draw, _| {
                let truth = draw.true_revenue();
                Ok(vec![("oracle".to_string(), Box::new(move |_: &EvaluationInstance| truth) as PreparedEstimator)])
            },
            &world,
            10,
            5,
            &[1, 2],
            1,
        )
        .unwrap();
        assert!(table.rows[0].mse < 1e-20);

        let certain: Arc<dyn DemandModel> = Arc::new(|x: &[f64], _: f64| if x[0] > 0.0 { 1.0 } else { 0.0 });
        let world = SyntheticWorld::with_demand(certain, 2.0, 2.0, 0).unwrap();
        let table = mc_decomposition::<SynthError, _>(
            |_, _| {
                let sample_mean: PreparedEstimator = Box::new(|inst: &EvaluationInstance| {
                    inst.demands().iter().zip(inst.logged_prices()).map(|(d, p)| d * p).sum::<f64>()
                });
                Ok(vec![("ipw-free".to_string(), sample_mean)])
            },
            &world,
            10,
            5,
            &[3],
            1,
        )
        .unwrap();
        assert!(table.rows[0].variance < 1e-20);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let world = make_setting_a(2.0, 0);
        let run = |workers| {
            mc_decomposition::<SynthError, _>(
                |_, _| {
                    let dm: PreparedEstimator = Box::new(|inst: &EvaluationInstance| {
                        inst.demands().iter().zip(inst.logged_prices()).map(|(d, p)| d * p).sum::<f64>()
                            / inst.n() as f64
                    });
                    Ok(vec![("naive".to_string(), dm)])
                },
                &world,
                15,
                20,
                &[1, 2, 3, 4, 5],
                workers,
            )
            .unwrap()
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn too_few_reps_is_an_error() {
        let err = mc_decomposition::<SynthError, _>(|_, _| Ok(Vec::new()), &make_setting_a(2.0, 0), 5, 1, &[0], 1)
            .unwrap_err();
        assert!(matches!(err, SynthError::TooFew { what: "reps", .. }));
    }
}
