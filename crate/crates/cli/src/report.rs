//! CSV and JSON emission.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot serialize report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot format CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Column order of every per-method table.
pub const METHOD_COLUMNS: [&str; 7] = ["method", "estimate", "wc_objective", "lower_bound", "mse", "bias_sq", "variance"];

/// One per-method CSV row. Missing figures are left empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub estimate: Option<f64>,
    pub wc_objective: Option<f64>,
    pub lower_bound: Option<f64>,
    pub mse: Option<f64>,
    pub bias_sq: Option<f64>,
    pub variance: Option<f64>,
}

/// A table ready for CSV: header plus already formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn methods(rows: &[MethodRow]) -> Self {
        let mut t = Self::new(&METHOD_COLUMNS);
        for r in rows {
            t.rows.push(vec![
                r.method.clone(),
                cell(r.estimate),
                cell(r.wc_objective),
                cell(r.lower_bound),
                cell(r.mse),
                cell(r.bias_sq),
                cell(r.variance),
            ]);
        }
        t
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("cells are UTF-8"))
    }
}

pub fn cell(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

/// `x` with 6 significant digits, `%g` style: fixed notation for decimal
/// exponents in `[-4, 6)`, scientific otherwise, trailing zeros trimmed.
pub fn sig6(x: f64) -> String {
    const DIGITS: i32 = 6;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // rounding may bump the exponent (9.999995 → 1.00000e1), so read it back
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write(path: &Path, text: &str) -> Result<(), ReportError> {
    fs::write(path, text).map_err(|source| ReportError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `table` as CSV and the serialized `json` report into `dir`.
pub fn emit(
    dir: &Path,
    csv_name: &str,
    json_name: &str,
    table: &Table,
    json: &str,
) -> Result<(PathBuf, PathBuf), ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let csv_path = dir.join(csv_name);
    let json_path = dir.join(json_name);
    write(&csv_path, &table.to_csv()?)?;
    write(&json_path, json)?;
    Ok((csv_path, json_path))
}
