//! Flat `key = value` run configuration with dotted keys.
//!
//! Every key can be overridden from the environment: `solver.outer_tol` is
//! read from `PRICING_OPE_SOLVER_OUTER_TOL`. Lists are comma-separated.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use pricing_ope::experiments::{Setting, WorldSpec};
use pricing_ope::hyperfit::DEFAULT_BUDGET;
use pricing_ope::kernel::DEFAULT_JITTER;
use pricing_ope::pipeline::{HyperSource, Method, PipelineConfig};
use pricing_ope::synth::DEFAULT_NOISE_SD;
use pricing_ope::{BoundConfig, CsvSchema, Objective, SolverConfig, TargetPolicySpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "PRICING_OPE_";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },

    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },

    #[error("line {line}: `{key}` is set twice")]
    Duplicate { line: usize, key: String },

    #[error("unknown key `{0}`")]
    UnknownKey(String),

    #[error("{field}: {reason}")]
    Field { field: String, reason: String },

    #[error("{field}: required for mode {mode}")]
    Missing { field: String, mode: Mode },
}

fn field_err(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        reason: reason.into(),
    }
}

// ── Modes ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SynthBench,
    Evaluate,
    Bound,
    FitHyper,
    OracleCheck,
    RateCheck,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SynthBench => "synth-bench",
            Self::Evaluate => "evaluate",
            Self::Bound => "bound",
            Self::FitHyper => "fit-hyper",
            Self::OracleCheck => "oracle-check",
            Self::RateCheck => "rate-check",
        })
    }
}

// ── Resolved configuration ──────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { world: WorldSpec, n: usize },
    Csv { path: String, schema: CsvSchema },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Worker threads; 0 means available parallelism. Results do not depend
    /// on it, so reports leave it out.
    #[serde(skip)]
    pub workers: usize,
    pub data: DataSource,
    /// Target prices for CSV data (synthetic worlds carry their own policy).
    pub target: Option<TargetPolicySpec>,
    pub objective: Objective,
    pub methods: Vec<Method>,
    pub pipeline: PipelineConfig,
    /// Synthetic instances per run.
    pub seeds: usize,
    pub reps: usize,
    pub oracle_count: usize,
    pub oracle_resolution: usize,
    pub rate_sizes: Vec<usize>,
    pub csv_name: String,
    pub json_name: String,
}

impl RunConfig {
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub fn world(&self) -> Option<(&WorldSpec, usize)> {
        match &self.data {
            DataSource::Synthetic { world, n } => Some((world, *n)),
            DataSource::Csv { .. } => None,
        }
    }
}

// ── Raw key-value layer ─────────────────────────────────────────────────

const KEYS: &[&str] = &[
    "seed",
    "workers",
    "objective",
    "methods",
    "data.source",
    "data.setting",
    "data.b",
    "data.noise_sd",
    "data.n",
    "data.path",
    "data.features",
    "data.price",
    "data.demand",
    "target.kind",
    "target.factor",
    "target.shift",
    "target.prices",
    "target.coef",
    "target.intercept",
    "target.noise_sd",
    "target.seed",
    "bound.epsilon",
    "jitter",
    "lasso.penalty",
    "hyper.source",
    "hyper.budget",
    "hyper.lengthscale_sq",
    "hyper.gamma_hat_sq",
    "hyper.sigma_sq",
    "solver.outer_max_iters",
    "solver.inner_max_iters",
    "solver.outer_tol",
    "solver.inner_tol",
    "solver.bias_slices",
    "solver.multistarts",
    "solver.smoothing_p",
    "solver.seed",
    "mc.seeds",
    "mc.reps",
    "oracle.count",
    "oracle.resolution",
    "rate.sizes",
    "output.csv",
    "output.json",
];

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

/// Parses the text of a config file. `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: k + 1,
                text: raw.to_string(),
            });
        };
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(ConfigError::Duplicate { line: k + 1, key });
        }
    }
    Ok(out)
}

/// Applies `PRICING_OPE_*` overrides from `vars`.
pub fn apply_env<I>(pairs: &mut BTreeMap<String, String>, vars: I)
where
    I: IntoIterator<Item = (String, String)>,
{
    let env: BTreeMap<String, String> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    for key in KEYS {
        if let Some(v) = env.get(&env_name(key)) {
            pairs.insert((*key).to_string(), v.clone());
        }
    }
}

struct Pairs<'a>(&'a BTreeMap<String, String>);

impl Pairs<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| field_err(key, format!("cannot parse `{v}`: {e}"))))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|e| field_err(key, format!("cannot parse `{s}`: {e}"))))
                    .collect()
            })
            .transpose()
    }

    fn required<T: FromStr>(&self, key: &str, mode: Mode) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or(ConfigError::Missing {
            field: key.to_string(),
            mode,
        })
    }
}

// ── Resolution ──────────────────────────────────────────────────────────

fn default_methods(mode: Mode) -> Vec<Method> {
    match mode {
        Mode::SynthBench => vec![Method::BopeB, Method::Bope, Method::Lasso],
        Mode::Bound => vec![Method::BopeBern, Method::BopeB, Method::Bope],
        _ => Method::ALL.to_vec(),
    }
}

fn default_names(mode: Mode) -> (&'static str, &'static str) {
    match mode {
        Mode::SynthBench => ("synth_bench.csv", "synth_bench.json"),
        Mode::Evaluate => ("evaluate.csv", "evaluate.json"),
        Mode::Bound => ("bound.csv", "bound.json"),
        Mode::FitHyper => ("hyper.csv", "hyper.json"),
        Mode::OracleCheck => ("oracle.csv", "oracle.json"),
        Mode::RateCheck => ("rate.csv", "rate.json"),
    }
}

/// Builds and validates the run configuration. `seed_override` wins over
/// both the file and the environment.
pub fn resolve(
    mode: Mode,
    pairs: &BTreeMap<String, String>,
    seed_override: Option<u64>,
) -> Result<RunConfig, ConfigError> {
    let p = Pairs(pairs);
    let seed = match seed_override {
        Some(s) => s,
        None => p.or("seed", 0u64)?,
    };

    let source = p.or("data.source", "synthetic".to_string())?;
    let data = match source.as_str() {
        "synthetic" => {
            let setting: Setting = p.or("data.setting", Setting::A)?;
            let b = p.or("data.b", 2.0)?;
            let noise_sd = p.or("data.noise_sd", DEFAULT_NOISE_SD)?;
            if !(noise_sd > 0.0) {
                return Err(field_err("data.noise_sd", "must be positive"));
            }
            let n = p.or("data.n", 50usize)?;
            if n == 0 {
                return Err(field_err("data.n", "must be positive"));
            }
            DataSource::Synthetic {
                world: WorldSpec { setting, b, noise_sd },
                n,
            }
        }
        "csv" => DataSource::Csv {
            path: p.required("data.path", mode)?,
            schema: CsvSchema {
                features: p.list("data.features")?.ok_or(ConfigError::Missing {
                    field: "data.features".into(),
                    mode,
                })?,
                price: p.or("data.price", "price".to_string())?,
                demand: p.or("data.demand", "demand".to_string())?,
            },
        },
        other => return Err(field_err("data.source", format!("expected synthetic or csv, got `{other}`"))),
    };

    let needs_world = matches!(mode, Mode::SynthBench | Mode::RateCheck);
    if needs_world && !matches!(data, DataSource::Synthetic { .. }) {
        return Err(field_err("data.source", format!("mode {mode} needs synthetic data")));
    }
    let target = match &data {
        DataSource::Csv { .. } if mode != Mode::OracleCheck => Some(target_policy(&p, mode)?),
        _ => None,
    };

    let epsilon = p.or("bound.epsilon", 0.1)?;
    let bound = BoundConfig::new(epsilon).map_err(|e| field_err("bound.epsilon", e.to_string()))?;
    let jitter = p.or("jitter", DEFAULT_JITTER)?;
    if !(jitter > 0.0 && jitter.is_finite()) {
        return Err(field_err("jitter", "must be positive"));
    }
    let lasso_penalty = p.get::<f64>("lasso.penalty")?;
    if matches!(lasso_penalty, Some(l) if !(l >= 0.0)) {
        return Err(field_err("lasso.penalty", "must be non-negative"));
    }

    let hyper = match p.or("hyper.source", "fit".to_string())?.as_str() {
        "fit" => HyperSource::Fit {
            budget: p.or("hyper.budget", DEFAULT_BUDGET)?,
        },
        "explicit" => {
            let lengthscale_sq: Vec<f64> = p.list("hyper.lengthscale_sq")?.ok_or(ConfigError::Missing {
                field: "hyper.lengthscale_sq".into(),
                mode,
            })?;
            if lengthscale_sq.is_empty() || lengthscale_sq.iter().any(|v| !(*v > 0.0)) {
                return Err(field_err("hyper.lengthscale_sq", "must be positive"));
            }
            let gamma_hat_sq: f64 = p.required("hyper.gamma_hat_sq", mode)?;
            if !(gamma_hat_sq >= 0.0) {
                return Err(field_err("hyper.gamma_hat_sq", "must be non-negative"));
            }
            let sigma_sq = p.or("hyper.sigma_sq", 1.0)?;
            if !(sigma_sq > 0.0) {
                return Err(field_err("hyper.sigma_sq", "must be positive"));
            }
            HyperSource::Explicit {
                lengthscale_sq,
                gamma_hat_sq,
                sigma_sq,
            }
        }
        other => return Err(field_err("hyper.source", format!("expected fit or explicit, got `{other}`"))),
    };

    let d = SolverConfig::default();
    let solver = SolverConfig {
        outer_max_iters: p.or("solver.outer_max_iters", d.outer_max_iters)?,
        inner_max_iters: p.or("solver.inner_max_iters", d.inner_max_iters)?,
        outer_tol: p.or("solver.outer_tol", d.outer_tol)?,
        inner_tol: p.or("solver.inner_tol", d.inner_tol)?,
        bias_slices: p.or("solver.bias_slices", d.bias_slices)?,
        multistarts: p.or("solver.multistarts", d.multistarts)?,
        smoothing_p: p.or("solver.smoothing_p", d.smoothing_p)?,
        seed: p.or("solver.seed", seed)?,
    };
    solver.validate().map_err(|e| field_err("solver", e.to_string()))?;

    let methods = match p.raw("methods") {
        Some(_) => p.list::<Method>("methods")?.unwrap_or_default(),
        None => default_methods(mode),
    };
    if mode == Mode::SynthBench && methods.contains(&Method::BopeBern) {
        return Err(field_err("methods", "synth-bench compares BOPE-B, BOPE and LASSO"));
    }

    let seeds = p.or("mc.seeds", if mode == Mode::SynthBench { 5 } else { 1 })?;
    let reps = p.or("mc.reps", 100usize)?;
    if seeds == 0 {
        return Err(field_err("mc.seeds", "must be positive"));
    }
    if mode == Mode::SynthBench && reps < 2 {
        return Err(field_err("mc.reps", "at least 2 replicates are needed"));
    }
    let oracle_count = p.or("oracle.count", 50usize)?;
    let oracle_resolution = p.or("oracle.resolution", 60usize)?;
    if oracle_resolution < 2 {
        return Err(field_err("oracle.resolution", "must be at least 2"));
    }
    let rate_sizes = p.list("rate.sizes")?.unwrap_or_else(|| vec![25, 50, 100, 200]);
    if mode == Mode::RateCheck && (rate_sizes.len() < 2 || rate_sizes.contains(&0)) {
        return Err(field_err("rate.sizes", "need at least two positive sizes"));
    }

    let (csv_default, json_default) = default_names(mode);
    Ok(RunConfig {
        mode,
        seed,
        workers: p.or("workers", 0usize)?,
        data,
        target,
        objective: p.or("objective", Objective::Mse)?,
        methods,
        pipeline: PipelineConfig {
            solver,
            bound,
            jitter,
            hyper,
            lasso_penalty,
        },
        seeds,
        reps,
        oracle_count,
        oracle_resolution,
        rate_sizes,
        csv_name: p.or("output.csv", csv_default.to_string())?,
        json_name: p.or("output.json", json_default.to_string())?,
    })
}

fn target_policy(p: &Pairs<'_>, mode: Mode) -> Result<TargetPolicySpec, ConfigError> {
    let kind: String = p.required("target.kind", mode)?;
    Ok(match kind.as_str() {
        "multiplicative" => TargetPolicySpec::Multiplicative {
            factor: p.required("target.factor", mode)?,
        },
        "additive" => TargetPolicySpec::Additive {
            shift: p.required("target.shift", mode)?,
        },
        "explicit" => TargetPolicySpec::Explicit {
            prices: p.list("target.prices")?.ok_or(ConfigError::Missing {
                field: "target.prices".into(),
                mode,
            })?,
        },
        "linear_gaussian" => TargetPolicySpec::LinearGaussian {
            coef: p.list("target.coef")?.ok_or(ConfigError::Missing {
                field: "target.coef".into(),
                mode,
            })?,
            intercept: p.required("target.intercept", mode)?,
            noise_sd: p.or("target.noise_sd", 0.0)?,
            seed: p.or("target.seed", 0u64)?,
        },
        other => {
            return Err(field_err(
                "target.kind",
                format!("expected multiplicative, additive, explicit or linear_gaussian, got `{other}`"),
            ));
        }
    })
}

/// Reads `path`, applies environment overrides and resolves.
pub fn load(
    mode: Mode,
    path: Option<&std::path::Path>,
    seed_override: Option<u64>,
) -> Result<RunConfig, ConfigError> {
    let mut pairs = match path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            parse_pairs(&text)?
        }
        None => BTreeMap::new(),
    };
    apply_env(&mut pairs, std::env::vars());
    resolve(mode, &pairs, seed_override)
}
