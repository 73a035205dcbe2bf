//! Mode dispatch.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pricing_ope::data::{apply_target_policy, load_csv};
use pricing_ope::experiments::{
    instance_seeds, oracle_check, oracle_tolerance, rate_check, synth_bench, BenchReport, DesignSummary, OracleCase,
    RateReport,
};
use pricing_ope::hyperfit::HyperParams;
use pricing_ope::pipeline::{evaluate_design, fit_design, Method, SolveDiagnostics};
use pricing_ope::synth::{draw_instance, parallel_map};
use pricing_ope::{EvaluationInstance, Objective};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, Mode, RunConfig};
use crate::report::{emit, sig6, MethodRow, Table};

/// Top-level JSON document of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub mode: Mode,
    pub config: RunConfig,
    pub result: T,
}

// ── Instances ───────────────────────────────────────────────────────────

struct Loaded {
    seed: Option<u64>,
    instance: EvaluationInstance,
    true_revenue: Option<f64>,
}

/// The synthetic draws for `cfg.seeds` instance seeds, or the single CSV
/// instance.
fn load_instances(cfg: &RunConfig) -> Result<Vec<Loaded>> {
    match &cfg.data {
        DataSource::Synthetic { world, n } => {
            let base = world.world(0).context("building synthetic world")?;
            instance_seeds(cfg.seed, cfg.seeds)
                .into_iter()
                .map(|seed| {
                    let draw = draw_instance(&base.with_seed(seed), *n).with_context(|| format!("drawing instance {seed}"))?;
                    Ok(Loaded {
                        seed: Some(seed),
                        true_revenue: Some(draw.true_revenue()),
                        instance: draw.instance,
                    })
                })
                .collect()
        }
        DataSource::Csv { path, schema } => {
            let ds = load_csv(path, schema).with_context(|| format!("loading {path}"))?;
            let target = cfg.target.as_ref().expect("resolved with the CSV source");
            let instance = apply_target_policy(&ds, target).context("applying target policy")?;
            Ok(vec![Loaded {
                seed: None,
                instance,
                true_revenue: None,
            }])
        }
    }
}

// ── Evaluate / bound ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub estimate: f64,
    pub wc_mse: f64,
    pub wc_bern: f64,
    /// Bernstein lower bound on the target revenue, floored at zero.
    pub lower_bound: f64,
    pub weights: Vec<f64>,
    pub diagnostics: Option<SolveDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub seed: Option<u64>,
    pub n: usize,
    pub true_revenue: Option<f64>,
    pub lasso_penalty: f64,
    pub bernoulli: HyperParams,
    pub gaussian: Option<HyperParams>,
    pub jitter: f64,
    pub dishonest: bool,
    pub methods: Vec<MethodReport>,
}

fn evaluate_instance(cfg: &RunConfig, loaded: &Loaded) -> Result<InstanceReport> {
    let inst = &loaded.instance;
    let design = fit_design(inst, &cfg.methods, &cfg.pipeline, &[]).context("fitting methods")?;
    let evals = evaluate_design(inst, &design, &cfg.pipeline).context("evaluating methods")?;
    let methods = evals
        .into_iter()
        .zip(&design.fits)
        .map(|(e, fit)| MethodReport {
            method: e.method,
            estimate: e.estimate,
            wc_mse: e.wc_mse,
            wc_bern: e.wc_bern,
            lower_bound: e.lower_bound,
            weights: fit.weights.as_slice().to_vec(),
            diagnostics: fit.diagnostics.clone(),
        })
        .collect();
    Ok(InstanceReport {
        seed: loaded.seed,
        n: inst.n(),
        true_revenue: loaded.true_revenue,
        lasso_penalty: design.lasso.l1_penalty,
        bernoulli: design.bernoulli,
        gaussian: design.gaussian,
        jitter: design.jitter,
        dishonest: design.dishonest,
        methods,
    })
}

fn evaluate_all(cfg: &RunConfig) -> Result<Vec<InstanceReport>> {
    let loaded = load_instances(cfg)?;
    let idx: Vec<usize> = (0..loaded.len()).collect();
    parallel_map(&idx, cfg.worker_count(), |k| {
        evaluate_instance(cfg, &loaded[k]).with_context(|| match loaded[k].seed {
            Some(seed) => format!("instance seed {seed}"),
            None => "CSV instance".to_string(),
        })
    })
    .into_iter()
    .collect()
}

fn objective_of(cfg: &RunConfig, m: &MethodReport) -> f64 {
    match cfg.objective {
        Objective::Mse => m.wc_mse,
        Objective::Bern => m.wc_bern,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Standard error of the mean; zero for a single instance.
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub method: Method,
    pub penalty: MeanSe,
    pub estimate: MeanSe,
    pub lower_bound: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub methods: Vec<BoundSummary>,
    pub instances: Vec<InstanceReport>,
}

// ── Experiments ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub passed: usize,
    pub cases: Vec<OracleCase>,
}

// ── Dispatch ────────────────────────────────────────────────────────────

/// What a run produced, ready to emit.
pub struct Output {
    pub table: Table,
    pub json: String,
    /// One-line summary for stdout.
    pub summary: String,
}

fn output<T: Serialize>(cfg: &RunConfig, table: Table, result: T, summary: String) -> Result<Output> {
    let report = Report {
        mode: cfg.mode,
        config: cfg.clone(),
        result,
    };
    Ok(Output {
        table,
        json: crate::report::to_json(&report)?,
        summary,
    })
}

fn synth_world(cfg: &RunConfig) -> (&pricing_ope::experiments::WorldSpec, usize) {
    cfg.world().expect("resolution rejects CSV data for this mode")
}

pub fn execute(cfg: &RunConfig) -> Result<Output> {
    let workers = cfg.worker_count();
    match cfg.mode {
        Mode::SynthBench => {
            let (spec, n) = synth_world(cfg);
            let seeds = instance_seeds(cfg.seed, cfg.seeds);
            let report: BenchReport = synth_bench(spec, n, cfg.reps, &seeds, &cfg.methods, &cfg.pipeline, workers)
                .context("running the MC benchmark")?;
            let rows: Vec<MethodRow> = report
                .table
                .rows
                .iter()
                .map(|r| MethodRow {
                    method: r.method.clone(),
                    estimate: Some(r.estimate),
                    mse: Some(r.mse),
                    bias_sq: Some(r.bias_sq),
                    variance: Some(r.variance),
                    ..Default::default()
                })
                .collect();
            let summary = format!("{} methods over {} seeds x {} reps", rows.len(), seeds.len(), cfg.reps);
            output(cfg, Table::methods(&rows), report, summary)
        }
        Mode::Evaluate => {
            let instances = evaluate_all(cfg)?;
            let first = &instances[0];
            let rows: Vec<MethodRow> = first
                .methods
                .iter()
                .map(|m| MethodRow {
                    method: m.method.name().to_string(),
                    estimate: Some(m.estimate),
                    wc_objective: Some(objective_of(cfg, m)),
                    lower_bound: Some(m.lower_bound),
                    ..Default::default()
                })
                .collect();
            let summary = format!("evaluated {} methods on n = {}", rows.len(), first.n);
            output(cfg, Table::methods(&rows), first.clone(), summary)
        }
        Mode::Bound => {
            let instances = evaluate_all(cfg)?;
            let methods: Vec<BoundSummary> = cfg
                .methods
                .iter()
                .enumerate()
                .map(|(k, &method)| {
                    let pick = |f: fn(&MethodReport) -> f64| -> Vec<f64> { instances.iter().map(|i| f(&i.methods[k])).collect() };
                    BoundSummary {
                        method,
                        penalty: MeanSe::of(&pick(|m| m.wc_bern)),
                        estimate: MeanSe::of(&pick(|m| m.estimate)),
                        lower_bound: MeanSe::of(&pick(|m| m.lower_bound)),
                    }
                })
                .collect();
            let rows: Vec<MethodRow> = methods
                .iter()
                .map(|b| MethodRow {
                    method: b.method.name().to_string(),
                    estimate: Some(b.estimate.mean),
                    wc_objective: Some(b.penalty.mean),
                    lower_bound: Some(b.lower_bound.mean),
                    ..Default::default()
                })
                .collect();
            let summary = format!("bounds for {} methods over {} instances", rows.len(), instances.len());
            output(cfg, Table::methods(&rows), BoundResult { methods, instances }, summary)
        }
        Mode::FitHyper => {
            let loaded = load_instances(cfg)?;
            let idx: Vec<usize> = (0..loaded.len()).collect();
            let designs: Vec<DesignSummary> = parallel_map(&idx, workers, |k| -> Result<DesignSummary> {
                let design = fit_design(&loaded[k].instance, &[Method::Bope], &cfg.pipeline, &[]).context("fitting hyperparameters")?;
                Ok(DesignSummary::new(loaded[k].seed.unwrap_or(cfg.seed), &design))
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let dims = designs[0].bernoulli.lengthscale_sq.len();
            let mut header = vec!["seed".to_string(), "variant".into()];
            header.extend((1..=dims).map(|j| format!("lengthscale_sq_{j}")));
            header.extend(["gamma_hat_sq", "sigma_sq", "evidence", "jitter"].map(String::from));
            let mut table = Table { header, rows: Vec::new() };
            for d in &designs {
                for (variant, hp) in [("bernoulli", Some(&d.bernoulli)), ("gaussian", d.gaussian.as_ref())] {
                    let Some(hp) = hp else { continue };
                    let mut row = vec![d.seed.to_string(), variant.to_string()];
                    row.extend(hp.lengthscale_sq.iter().map(|v| sig6(*v)));
                    row.push(sig6(hp.gamma_hat_sq));
                    row.push(hp.sigma_sq.map(sig6).unwrap_or_default());
                    row.push(sig6(hp.evidence));
                    row.push(sig6(d.jitter));
                    table.rows.push(row);
                }
            }
            let summary = format!("fitted hyperparameters on {} instances", designs.len());
            output(cfg, table, designs, summary)
        }
        Mode::OracleCheck => {
            let cases = oracle_check(
                cfg.oracle_count,
                cfg.oracle_resolution,
                cfg.seed,
                &cfg.pipeline.solver,
                &cfg.pipeline.bound,
                workers,
            )
            .context("running the oracle comparison")?;
            let mut table = Table::new(&["index", "n", "objective", "solver", "oracle", "tolerance", "within"]);
            for c in &cases {
                table.rows.push(vec![
                    c.index.to_string(),
                    c.n.to_string(),
                    c.objective.to_string(),
                    sig6(c.solver),
                    sig6(c.oracle),
                    sig6(oracle_tolerance(c.oracle)),
                    c.within.to_string(),
                ]);
            }
            let passed = cases.iter().filter(|c| c.within).count();
            let summary = format!("{passed}/{} solver values within tolerance of the grid oracle", cases.len());
            output(cfg, table, OracleResult { passed, cases }, summary)
        }
        Mode::RateCheck => {
            let (spec, _) = synth_world(cfg);
            let seeds = instance_seeds(cfg.seed, cfg.seeds);
            let report: RateReport =
                rate_check(spec, &cfg.rate_sizes, &seeds, &cfg.pipeline, workers).context("running the rate sweep")?;
            let mut table = Table::new(&["n", "wc_mse", "wc_bern"]);
            for p in &report.points {
                table.rows.push(vec![p.n.to_string(), sig6(p.wc_mse), sig6(p.wc_bern)]);
            }
            let summary = format!(
                "log-log slopes: wc_mse {}, wc_bern {}",
                sig6(report.slope_mse),
                sig6(report.slope_bern)
            );
            output(cfg, table, report, summary)
        }
    }
}

/// Runs `cfg` and writes both reports into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, PathBuf, String)> {
    let o = execute(cfg)?;
    let (csv, json) = emit(out, &cfg.csv_name, &cfg.json_name, &o.table, &o.json)?;
    Ok((csv, json, o.summary))
}
