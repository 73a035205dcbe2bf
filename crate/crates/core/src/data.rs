//! Logged pricing data, target-policy prices and the joined evaluation instance.
//!
//! An [`EvaluationInstance`] carries `2n` points: points `0..n` pair each
//! customer's features with the logged price, points `n..2n` pair the same
//! features with the target policy's price.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}: missing value for column `{column}`")]
    MissingField { row: usize, column: String },

    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: price must be strictly positive, got {value}")]
    NonPositivePrice { row: usize, value: f64 },

    #[error("row {row}: demand must be 0 or 1, got {value}")]
    InvalidDemand { row: usize, value: String },

    #[error("dataset is empty")]
    Empty,

    #[error("at least one feature column is required")]
    NoFeatures,

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("target price for customer {index} is not strictly positive ({value})")]
    NonPositiveTarget { index: usize, value: f64 },

    #[error("invalid target policy: {0}")]
    InvalidPolicy(String),
}

// ── Dataset ─────────────────────────────────────────────────────────────

/// Logged covariates, prices and binary purchase decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingDataset {
    features: Vec<Vec<f64>>,
    logged_prices: Vec<f64>,
    demands: Vec<f64>,
}

impl PricingDataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        logged_prices: Vec<f64>,
        demands: Vec<f64>,
    ) -> Result<Self, DataError> {
        let n = features.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        let d = features[0].len();
        if d == 0 {
            return Err(DataError::NoFeatures);
        }
        for row in &features {
            if row.len() != d {
                return Err(DataError::LengthMismatch {
                    what: "feature row",
                    got: row.len(),
                    expected: d,
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite("features"));
            }
        }
        check_len("logged_prices", logged_prices.len(), n)?;
        check_len("demands", demands.len(), n)?;
        for (i, &p) in logged_prices.iter().enumerate() {
            if !(p.is_finite() && p > 0.0) {
                return Err(DataError::NonPositivePrice { row: i + 1, value: p });
            }
        }
        for (i, &dm) in demands.iter().enumerate() {
            if dm != 0.0 && dm != 1.0 {
                return Err(DataError::InvalidDemand {
                    row: i + 1,
                    value: dm.to_string(),
                });
            }
        }
        Ok(Self {
            features,
            logged_prices,
            demands,
        })
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn logged_prices(&self) -> &[f64] {
        &self.logged_prices
    }

    pub fn demands(&self) -> &[f64] {
        &self.demands
    }

    /// Same design, different demand realization.
    pub fn with_demands(&self, demands: Vec<f64>) -> Result<Self, DataError> {
        Self::new(self.features.clone(), self.logged_prices.clone(), demands)
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), DataError> {
    if got == expected {
        Ok(())
    } else {
        Err(DataError::LengthMismatch {
            what,
            got,
            expected,
        })
    }
}

// ── CSV ─────────────────────────────────────────────────────────────────

/// Maps CSV header names onto the dataset fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub price: String,
    pub demand: String,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PricingDataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<PricingDataset, DataError> {
    if schema.features.is_empty() {
        return Err(DataError::NoFeatures);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let feature_idx = schema
        .features
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>, _>>()?;
    let price_idx = find(&schema.price)?;
    let demand_idx = find(&schema.demand)?;

    let mut features = Vec::new();
    let mut prices = Vec::new();
    let mut demands = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let row = k + 1;
        let cell = |idx: usize, column: &str| -> Result<&str, DataError> {
            match record.get(idx) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(DataError::MissingField {
                    row,
                    column: column.to_string(),
                }),
            }
        };
        let parse = |idx: usize, column: &str| -> Result<f64, DataError> {
            let raw = cell(idx, column)?;
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DataError::Parse {
                    row,
                    column: column.to_string(),
                    value: raw.to_string(),
                }),
            }
        };
        let x = feature_idx
            .iter()
            .zip(&schema.features)
            .map(|(&i, c)| parse(i, c))
            .collect::<Result<Vec<_>, _>>()?;
        let p = parse(price_idx, &schema.price)?;
        if p <= 0.0 {
            return Err(DataError::NonPositivePrice { row, value: p });
        }
        let raw_demand = cell(demand_idx, &schema.demand)?;
        let dm = match raw_demand.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => v,
            _ => {
                return Err(DataError::InvalidDemand {
                    row,
                    value: raw_demand.to_string(),
                })
            }
        };
        features.push(x);
        prices.push(p);
        demands.push(dm);
    }
    PricingDataset::new(features, prices, demands)
}

/// Writes the mapped columns back out. Values use the shortest decimal
/// representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(
    ds: &PricingDataset,
    schema: &CsvSchema,
    writer: W,
) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.features.iter().map(String::as_str).collect();
    header.push(&schema.price);
    header.push(&schema.demand);
    wtr.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.features[i].iter().map(|v| v.to_string()).collect();
        rec.push(ds.logged_prices[i].to_string());
        rec.push(format!("{}", ds.demands[i] as u8));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

// ── Target policy ───────────────────────────────────────────────────────

/// How the target policy prices each logged customer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetPolicySpec {
    Multiplicative { factor: f64 },
    Additive { shift: f64 },
    Explicit { prices: Vec<f64> },
    /// `price = coef·x + intercept + noise_sd·N(0,1)` on raw features.
    LinearGaussian {
        coef: Vec<f64>,
        intercept: f64,
        noise_sd: f64,
        seed: u64,
    },
}

pub fn apply_target_policy(
    ds: &PricingDataset,
    spec: &TargetPolicySpec,
) -> Result<EvaluationInstance, DataError> {
    let target: Vec<f64> = match spec {
        TargetPolicySpec::Multiplicative { factor } => {
            if !(factor.is_finite() && *factor > 0.0) {
                return Err(DataError::InvalidPolicy(format!(
                    "multiplicative factor must be positive, got {factor}"
                )));
            }
            ds.logged_prices.iter().map(|p| p * factor).collect()
        }
        TargetPolicySpec::Additive { shift } => {
            ds.logged_prices.iter().map(|p| p + shift).collect()
        }
        TargetPolicySpec::Explicit { prices } => {
            check_len("explicit target prices", prices.len(), ds.n())?;
            prices.clone()
        }
        TargetPolicySpec::LinearGaussian {
            coef,
            intercept,
            noise_sd,
            seed,
        } => {
            check_len("policy coefficients", coef.len(), ds.dim())?;
            if !(*noise_sd >= 0.0) {
                return Err(DataError::InvalidPolicy(format!(
                    "noise_sd must be non-negative, got {noise_sd}"
                )));
            }
            let mut rng = rng::stream(*seed, "target-policy", 0);
            ds.features
                .iter()
                .map(|x| {
                    let mean: f64 = x.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>() + intercept;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + noise_sd * z
                })
                .collect()
        }
    };
    EvaluationInstance::new(ds.clone(), target)
}

// ── Evaluation instance ─────────────────────────────────────────────────

/// Per-column affine map applied to kernel inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub price_mean: f64,
    pub price_scale: f64,
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let sd = var.sqrt();
    // constant columns keep a unit divisor
    let scale = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 };
    (mean, scale)
}

/// The `2n` evaluation points: logged prices first, target prices second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationInstance {
    dataset: PricingDataset,
    target_prices: Vec<f64>,
    price_vector: Vec<f64>,
    standardization: Standardization,
    /// Standardized `(features, price)` for each of the `2n` points.
    kernel_points: Vec<Vec<f64>>,
}

impl EvaluationInstance {
    /// Joins a dataset with target prices. Standardization statistics are
    /// taken over all `2n` points.
    pub fn new(dataset: PricingDataset, target_prices: Vec<f64>) -> Result<Self, DataError> {
        let n = dataset.n();
        check_len("target prices", target_prices.len(), n)?;
        for (i, &p) in target_prices.iter().enumerate() {
            if !(p.is_finite() && p > 0.0) {
                return Err(DataError::NonPositiveTarget { index: i, value: p });
            }
        }
        let d = dataset.dim();
        let (feature_mean, feature_scale): (Vec<f64>, Vec<f64>) = (0..d)
            .map(|j| mean_and_scale(dataset.features.iter().map(move |x| x[j])))
            .unzip();
        let price_vector: Vec<f64> = dataset
            .logged_prices
            .iter()
            .chain(&target_prices)
            .copied()
            .collect();
        let (price_mean, price_scale) = mean_and_scale(price_vector.iter().copied());
        let standardization = Standardization {
            feature_mean,
            feature_scale,
            price_mean,
            price_scale,
        };
        let kernel_points = (0..2 * n)
            .map(|i| {
                let x = &dataset.features[i % n];
                let mut z: Vec<f64> = x
                    .iter()
                    .zip(&standardization.feature_mean)
                    .zip(&standardization.feature_scale)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect();
                z.push((price_vector[i] - price_mean) / price_scale);
                z
            })
            .collect();
        Ok(Self {
            dataset,
            target_prices,
            price_vector,
            standardization,
            kernel_points,
        })
    }

    pub fn n(&self) -> usize {
        self.dataset.n()
    }

    /// Kernel input dimension, `d + 1`.
    pub fn point_dim(&self) -> usize {
        self.dataset.dim() + 1
    }

    pub fn dataset(&self) -> &PricingDataset {
        &self.dataset
    }

    pub fn demands(&self) -> &[f64] {
        self.dataset.demands()
    }

    pub fn logged_prices(&self) -> &[f64] {
        self.dataset.logged_prices()
    }

    pub fn target_prices(&self) -> &[f64] {
        &self.target_prices
    }

    /// `p ∈ ℝ²ⁿ`.
    pub fn price_vector(&self) -> &[f64] {
        &self.price_vector
    }

    /// Raw features of point `i ∈ [0, 2n)`.
    pub fn features(&self, i: usize) -> &[f64] {
        &self.dataset.features[i % self.n()]
    }

    pub fn kernel_points(&self) -> &[Vec<f64>] {
        &self.kernel_points
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Same points, different demand realization.
    pub fn with_demands(&self, demands: Vec<f64>) -> Result<Self, DataError> {
        let mut out = self.clone();
        out.dataset = self.dataset.with_demands(demands)?;
        Ok(out)
    }
}
