//! Synthetic experiment protocols: MC benchmark, bound coverage, solver
//! versus grid oracle, dominance over fixed candidates and rate sweeps.

use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_lasso, ip_weights, reference_revenue};
use crate::data::{PricingDataset, TargetPolicySpec, apply_target_policy};
use crate::estimator::{BoundConfig, RevenueBall, Weights, bernstein_penalty, point_estimate, point_estimate_with};
use crate::kernel::{KernelConfig, gram_matrix};
use crate::hyperfit::HyperParams;
use crate::pipeline::{Design, Method, PipelineConfig, PipelineError, fit_design};
use crate::rng;
use crate::synth::{
    McTable, PreparedEstimator, SettingADemand, SettingBDemand, SyntheticDraw, SyntheticWorld, draw_instance,
    mc_decomposition, parallel_map,
};
use crate::wcopt::{Objective, SolverConfig, WorstCaseSolver, brute_force_oracle};

// ── Worlds ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    A,
    B,
}

impl std::str::FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            other => Err(format!("unknown setting `{other}` (expected a or b)")),
        }
    }
}

/// Demand setting plus the target intercept and policy noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub setting: Setting,
    pub b: f64,
    pub noise_sd: f64,
}

impl WorldSpec {
    pub fn world(&self, seed: u64) -> Result<SyntheticWorld, PipelineError> {
        let demand: Arc<dyn crate::synth::DemandModel> = match self.setting {
            Setting::A => Arc::new(SettingADemand),
            Setting::B => Arc::new(SettingBDemand),
        };
        Ok(SyntheticWorld::with_demand(demand, self.b, self.noise_sd, seed)?)
    }
}

/// Instance seeds `0..count` under `root`.
pub fn instance_seeds(root: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| rng::derive_seed(root, "instance", k)).collect()
}

// ── MC benchmark ────────────────────────────────────────────────────────

/// What was fitted on one seed's logged data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub seed: u64,
    pub lasso_penalty: f64,
    pub bernoulli: HyperParams,
    pub gaussian: Option<HyperParams>,
    pub jitter: f64,
    pub dishonest: bool,
}

impl DesignSummary {
    pub fn new(seed: u64, design: &Design) -> Self {
        Self {
            seed,
            lasso_penalty: design.lasso.l1_penalty,
            bernoulli: design.bernoulli.clone(),
            gaussian: design.gaussian.clone(),
            jitter: design.jitter,
            dishonest: design.dishonest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub table: McTable,
    /// In seed order.
    pub designs: Vec<DesignSummary>,
}

/// Fits `methods` once per seed, then re-estimates on fresh demand vectors.
/// Each replicate refits LASSO at the seed's cross-validated penalty.
pub fn synth_bench(
    spec: &WorldSpec,
    n: usize,
    reps: usize,
    seeds: &[u64],
    methods: &[Method],
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<BenchReport, PipelineError> {
    let world = spec.world(0)?;
    let designs = Mutex::new(Vec::new());
    let prepare = |draw: &SyntheticDraw, seed: u64| -> Result<Vec<(String, PreparedEstimator)>, PipelineError> {
        let design = fit_design(&draw.instance, methods, cfg, &[])?;
        designs.lock().expect("not poisoned").push(DesignSummary::new(seed, &design));
        let penalty = design.lasso.l1_penalty;
        Ok(design
            .fits
            .iter()
            .map(|fit| {
                let w = fit.weights.clone();
                let est: PreparedEstimator = Box::new(move |inst| match fit_lasso(inst.dataset(), penalty) {
                    Ok(model) => point_estimate(&w, inst, &reference_revenue(&model, inst)),
                    Err(_) => f64::NAN,
                });
                (fit.method.name().to_string(), est)
            })
            .collect())
    };
    let table = mc_decomposition(prepare, &world, n, reps, seeds, workers)?;
    let mut designs = designs.into_inner().expect("not poisoned");
    designs.sort_by_key(|d| seeds.iter().position(|s| *s == d.seed));
    Ok(BenchReport { table, designs })
}

// ── Coverage ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSeed {
    pub seed: u64,
    pub true_revenue: f64,
    /// Bernstein penalty of the fitted weights at the true revenue vector.
    pub penalty: f64,
    pub misses: usize,
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub seeds: Vec<CoverageSeed>,
    pub miss_rate: f64,
}

/// Relative gap below which `R̂ − Bern` and the truth count as tied, not missed.
pub const TIE_TOL: f64 = 1e-12;

/// Fits Bernstein weights and `r̂` once per seed, then counts fresh demand
/// realizations whose estimate minus the penalty at the truth exceeds the
/// true revenue.
pub fn coverage_check(
    spec: &WorldSpec,
    n: usize,
    realizations: usize,
    seeds: &[u64],
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<CoverageReport, PipelineError> {
    let world = spec.world(0)?;
    let run = |seed: u64| -> Result<CoverageSeed, PipelineError> {
        let draw = draw_instance(&world.with_seed(seed), n)?;
        let inst = &draw.instance;
        let design = fit_design(inst, &[Method::BopeBern], cfg, &[])?;
        let w = design.weights(Method::BopeBern).expect("fitted");
        let ball = design.ball(inst)?;
        let penalty = bernstein_penalty(w, &draw.true_r, inst, &ball, &cfg.bound);
        let truth = draw.true_revenue();
        let misses = (0..realizations)
            .filter(|&j| {
                let demands = draw.simulate_demands(&mut rng::stream(seed, "coverage-demands", j as u64));
                point_estimate_with(w, inst.logged_prices(), &demands, &design.r_hat) - penalty
                    > truth + TIE_TOL * truth.abs().max(1.0)
            })
            .count();
        Ok(CoverageSeed {
            seed,
            true_revenue: truth,
            penalty,
            misses,
            realizations,
        })
    };
    let seeds = parallel_map(seeds, workers, run).into_iter().collect::<Result<Vec<_>, _>>()?;
    let total: usize = seeds.iter().map(|s| s.realizations).sum();
    let misses: usize = seeds.iter().map(|s| s.misses).sum();
    Ok(CoverageReport {
        miss_rate: misses as f64 / total.max(1) as f64,
        seeds,
    })
}

// ── Oracle comparison ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub index: usize,
    pub n: usize,
    pub objective: Objective,
    pub solver: f64,
    pub oracle: f64,
    pub within: bool,
}

/// Oracle agreement: `|solver − oracle| ≤ max(1e-2, 2%·|oracle|)`.
pub fn oracle_tolerance(oracle: f64) -> f64 {
    (0.02 * oracle.abs()).max(1e-2)
}

/// A random instance with `n` logged points, its ball and a weight vector.
fn oracle_case(root: u64, index: usize, n: usize) -> Result<(crate::EvaluationInstance, RevenueBall, Weights), PipelineError> {
    let mut g = rng::stream(root, "oracle-case", index as u64);
    let ds = PricingDataset::new(
        (0..n).map(|_| vec![g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)]).collect(),
        (0..n).map(|_| g.random_range(2.0..8.0)).collect(),
        (0..n).map(|_| f64::from(g.random_range(0..2u8))).collect(),
    )?;
    let targets = (0..n).map(|_| g.random_range(1.0..6.0)).collect();
    let inst = apply_target_policy(&ds, &TargetPolicySpec::Explicit { prices: targets })?;
    let r_hat = inst.price_vector().iter().map(|p| p * g.random_range(0.2..0.8)).collect();
    let ball = RevenueBall::for_instance(&inst, r_hat, g.random_range(0.3..2.0))?;
    let w = Weights::new((0..n).map(|_| g.random_range(-2.0..3.0)).collect())?;
    Ok((inst, ball, w))
}

/// Solver against the grid oracle on `count` random instances with
/// `n = 1, 2, 3` in turn, both objectives each.
pub fn oracle_check(
    count: usize,
    resolution: usize,
    root: u64,
    solver_cfg: &SolverConfig,
    bound: &BoundConfig,
    workers: usize,
) -> Result<Vec<OracleCase>, PipelineError> {
    let indices: Vec<usize> = (0..count).collect();
    let run = |index: usize| -> Result<Vec<OracleCase>, PipelineError> {
        let n = index % 3 + 1;
        let (inst, ball, w) = oracle_case(root, index, n)?;
        let gf = gram_matrix(&inst, &KernelConfig::isotropic(inst.kernel_points()[0].len()))?;
        let solver = WorstCaseSolver::new(&inst, &ball, &gf, solver_cfg, bound)?;
        [Objective::Mse, Objective::Bern]
            .into_iter()
            .map(|objective| {
                let value = solver.evaluate(objective, &w).objective;
                let oracle = brute_force_oracle(&w, &inst, &ball, &gf, objective, bound, resolution)?.objective;
                Ok(OracleCase {
                    index,
                    n,
                    objective,
                    solver: value,
                    oracle,
                    within: (value - oracle).abs() <= oracle_tolerance(oracle),
                })
            })
            .collect()
    };
    let nested = parallel_map(&indices, workers, run).into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(nested.into_iter().flatten().collect())
}

// ── Dominance ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceCase {
    pub seed: u64,
    pub objective: Objective,
    pub optimized: f64,
    pub zero: f64,
    pub bope: f64,
    pub inverse_propensity: f64,
}

impl DominanceCase {
    pub fn holds(&self, slack: f64) -> bool {
        self.optimized <= self.zero.min(self.bope).min(self.inverse_propensity) + slack
    }
}

/// Optimized weights versus zero, BOPE and inverse-propensity weights, all
/// scored with the same inner solver on the common evaluation ball.
pub fn dominance_check(
    spec: &WorldSpec,
    n: usize,
    seeds: &[u64],
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<Vec<DominanceCase>, PipelineError> {
    let world = spec.world(0)?;
    let run = |seed: u64| -> Result<Vec<DominanceCase>, PipelineError> {
        let draw = draw_instance(&world.with_seed(seed), n)?;
        let inst = &draw.instance;
        let ip = ip_weights(
            inst,
            |x, p| world.logging().density(x, p).unwrap_or(f64::NAN),
            |x, p| world.target().density(x, p).unwrap_or(f64::NAN),
        )?;
        let design = fit_design(inst, &[Method::Bope, Method::BopeB, Method::BopeBern], cfg, &[ip.clone()])?;
        let gf = gram_matrix(inst, &design.kernel(cfg.jitter)?)?;
        let ball = design.ball(inst)?;
        let solver = WorstCaseSolver::new(inst, &ball, &gf, &cfg.solver, &cfg.bound)?;
        let bope = design.weights(Method::Bope).expect("fitted");
        Ok([(Objective::Mse, Method::BopeB), (Objective::Bern, Method::BopeBern)]
            .into_iter()
            .map(|(objective, method)| {
                let h = |w: &Weights| solver.evaluate(objective, w).objective;
                DominanceCase {
                    seed,
                    objective,
                    optimized: h(design.weights(method).expect("fitted")),
                    zero: h(&Weights::zeros(inst.n())),
                    bope: h(bope),
                    inverse_propensity: h(&ip),
                }
            })
            .collect())
    };
    let nested = parallel_map(seeds, workers, run).into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(nested.into_iter().flatten().collect())
}

// ── Rates ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    /// Worst-case MSE of the MSE-optimal weights, averaged over seeds.
    pub wc_mse: f64,
    /// Worst-case Bernstein penalty of the Bernstein-optimal weights.
    pub wc_bern: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    pub slope_mse: f64,
    pub slope_bern: f64,
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Optimized worst-case figures across sample sizes, averaged over seeds.
pub fn rate_check(
    spec: &WorldSpec,
    sizes: &[usize],
    seeds: &[u64],
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<RateReport, PipelineError> {
    let world = spec.world(0)?;
    let jobs: Vec<(usize, u64)> = sizes.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let run = |(n, seed): (usize, u64)| -> Result<(f64, f64), PipelineError> {
        let draw = draw_instance(&world.with_seed(seed), n)?;
        let inst = &draw.instance;
        let design = fit_design(inst, &[], cfg, &[])?;
        let gf = gram_matrix(inst, &design.kernel(cfg.jitter)?)?;
        let ball = design.ball(inst)?;
        let solver = WorstCaseSolver::new(inst, &ball, &gf, &cfg.solver, &cfg.bound)?;
        let mse = solver.solve_weights(Objective::Mse, &[]).worst_case.objective;
        let bern = solver.solve_weights(Objective::Bern, &[]).worst_case.objective;
        Ok((mse, bern))
    };
    let values = parallel_map(&jobs, workers, run).into_iter().collect::<Result<Vec<_>, _>>()?;
    let k = seeds.len() as f64;
    let points: Vec<RatePoint> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let chunk = &values[i * seeds.len()..(i + 1) * seeds.len()];
            RatePoint {
                n,
                wc_mse: chunk.iter().map(|v| v.0).sum::<f64>() / k,
                wc_bern: chunk.iter().map(|v| v.1).sum::<f64>() / k,
            }
        })
        .collect();
    let ns: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let mse: Vec<f64> = points.iter().map(|p| p.wc_mse).collect();
    let bern: Vec<f64> = points.iter().map(|p| p.wc_bern).collect();
    Ok(RateReport {
        slope_mse: loglog_slope(&ns, &mse),
        slope_bern: loglog_slope(&ns, &bern),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_slope_recovers_power_law() {
        let x = [25.0, 50.0, 100.0, 200.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.75)).collect();
        assert!((loglog_slope(&x, &y) + 0.75).abs() < 1e-12);
    }

    #[test]
    fn instance_seeds_are_distinct() {
        let s = instance_seeds(0, 10);
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }

    #[test]
    fn oracle_cases_cycle_sizes() {
        for index in 0..6 {
            let (inst, ball, w) = oracle_case(3, index, index % 3 + 1).unwrap();
            assert_eq!(inst.n(), index % 3 + 1);
            assert_eq!(ball.dim(), 2 * inst.n());
            assert_eq!(w.len(), inst.n());
        }
    }
}
