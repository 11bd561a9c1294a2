//! Observed hybrid-trial data `(Y, X, A, D)`: ingestion, validation and
//! export.
//!
//! Rows with `D = 1` come from the randomized trial, rows with `D = 0` are
//! external controls. External controls are never treated, the trial must
//! contain both arms, and covariates must be complete. Row numbers reported
//! in validation failures are 1-based record numbers (the header row is not
//! counted).

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column-name map from a CSV file onto the observed-data roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub treatment: String,
    pub source: String,
    pub covariates: Vec<String>,
    /// Design value of `Pr(A = 1 | D = 1)`, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_treat_prob: Option<f64>,
}

impl Schema {
    pub fn new(outcome: &str, treatment: &str, source: &str, covariates: &[&str]) -> Self {
        Schema {
            outcome: outcome.to_string(),
            treatment: treatment.to_string(),
            source: source.to_string(),
            covariates: covariates.iter().map(|c| c.to_string()).collect(),
            known_treat_prob: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))
    }
}

/// Structural rule broken by some rows of a candidate dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: &'static str,
    /// 1-based record numbers; empty for dataset-level rules.
    pub rows: Vec<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub passed: bool,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        let passed = violations.is_empty();
        ValidationReport { violations, passed }
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| {
                if v.rows.is_empty() {
                    format!("[{}] {}", v.rule, v.message)
                } else {
                    let rows: Vec<String> = v.rows.iter().take(10).map(|r| r.to_string()).collect();
                    let more = if v.rows.len() > 10 { ", ..." } else { "" };
                    format!("[{}] {} (rows {}{})", v.rule, v.message, rows.join(", "), more)
                }
            })
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}, column '{column}': cannot read '{value}' as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("validation failed: {0}")]
    Validation(ValidationReport),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Observed data of a hybrid trial. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    outcome: Vec<f64>,
    covariates: DMatrix<f64>,
    covariate_names: Vec<String>,
    treatment: Vec<u8>,
    source: Vec<u8>,
    known_treat_prob: Option<f64>,
}

/// Checks the structural rules on raw columns. `NaN` marks a missing cell.
pub fn validate(outcome: &[f64], covariates: &DMatrix<f64>, treatment: &[f64], source: &[f64]) -> ValidationReport {
    let n = outcome.len();
    let mut violations = Vec::new();

    let incomplete: Vec<usize> = (0..n)
        .filter(|&i| !outcome[i].is_finite() || covariates.row(i).iter().any(|v| !v.is_finite()))
        .map(|i| i + 1)
        .collect();
    if !incomplete.is_empty() {
        violations.push(Violation {
            rule: "complete-case",
            rows: incomplete,
            message: "outcome or covariate value missing".into(),
        });
    }

    let binary = |v: f64| v == 0.0 || v == 1.0;
    let bad_coding: Vec<usize> = (0..n)
        .filter(|&i| !binary(treatment[i]) || !binary(source[i]))
        .map(|i| i + 1)
        .collect();
    if !bad_coding.is_empty() {
        violations.push(Violation {
            rule: "binary-coding",
            rows: bad_coding,
            message: "treatment and source must be coded 0/1".into(),
        });
    }

    let treated_external: Vec<usize> = (0..n)
        .filter(|&i| source[i] == 0.0 && treatment[i] == 1.0)
        .map(|i| i + 1)
        .collect();
    if !treated_external.is_empty() {
        violations.push(Violation {
            rule: "external-untreated",
            rows: treated_external,
            message: "external controls (source = 0) must have treatment = 0".into(),
        });
    }

    let n_rct = source.iter().filter(|&&d| d == 1.0).count();
    if n_rct == 0 {
        violations.push(Violation {
            rule: "rct-nonempty",
            rows: vec![],
            message: "no randomized (source = 1) rows".into(),
        });
    } else {
        let treated = (0..n).filter(|&i| source[i] == 1.0 && treatment[i] == 1.0).count();
        let controls = (0..n).filter(|&i| source[i] == 1.0 && treatment[i] == 0.0).count();
        if treated == 0 || controls == 0 {
            let arm = if treated == 0 { "treated" } else { "control" };
            violations.push(Violation {
                rule: "positivity",
                rows: vec![],
                message: format!("randomized {arm} arm is empty"),
            });
        }
    }
    ValidationReport::from_violations(violations)
}

impl TrialDataset {
    /// Builds a dataset, rejecting it unless every structural rule holds.
    pub fn new(
        outcome: Vec<f64>,
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
        treatment: Vec<u8>,
        source: Vec<u8>,
        known_treat_prob: Option<f64>,
    ) -> Result<Self, DataError> {
        let n = outcome.len();
        if covariates.nrows() != n || treatment.len() != n || source.len() != n {
            return Err(DataError::Shape(format!(
                "column lengths differ: outcome {n}, covariates {}, treatment {}, source {}",
                covariates.nrows(),
                treatment.len(),
                source.len()
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(DataError::Shape(format!(
                "{} covariate names for {} covariate columns",
                covariate_names.len(),
                covariates.ncols()
            )));
        }
        if let Some(p) = known_treat_prob {
            if !(p > 0.0 && p < 1.0) {
                return Err(DataError::Schema(format!("known_treat_prob must lie in (0, 1), got {p}")));
            }
        }
        let a: Vec<f64> = treatment.iter().map(|&v| v as f64).collect();
        let d: Vec<f64> = source.iter().map(|&v| v as f64).collect();
        let report = validate(&outcome, &covariates, &a, &d);
        if !report.passed {
            return Err(DataError::Validation(report));
        }
        Ok(TrialDataset { outcome, covariates, covariate_names, treatment, source, known_treat_prob })
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_rct(&self) -> usize {
        self.source.iter().filter(|&&d| d == 1).count()
    }

    pub fn n_ec(&self) -> usize {
        self.n_rows() - self.n_rct()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn source(&self) -> &[u8] {
        &self.source
    }

    pub fn known_treat_prob(&self) -> Option<f64> {
        self.known_treat_prob
    }

    /// Treatment indicator of row `i` as a real number.
    #[inline]
    pub fn a(&self, i: usize) -> f64 {
        self.treatment[i] as f64
    }

    /// Source indicator of row `i` as a real number.
    #[inline]
    pub fn d(&self, i: usize) -> f64 {
        self.source[i] as f64
    }

    /// Indices of rows satisfying `pred(treatment, source)`.
    pub fn rows_where(&self, pred: impl Fn(u8, u8) -> bool) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| pred(self.treatment[i], self.source[i])).collect()
    }

    /// Same rows and design, different outcome vector.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self, DataError> {
        TrialDataset::new(
            outcome,
            self.covariates.clone(),
            self.covariate_names.clone(),
            self.treatment.clone(),
            self.source.clone(),
            self.known_treat_prob,
        )
    }

    /// Same rows, only the named covariate columns (in the given order).
    pub fn with_covariates(&self, names: &[String]) -> Result<Self, DataError> {
        let cols: Vec<usize> = names
            .iter()
            .map(|name| {
                self.covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| DataError::Schema(format!("unknown covariate '{name}'")))
            })
            .collect::<Result<_, _>>()?;
        Ok(TrialDataset {
            outcome: self.outcome.clone(),
            covariates: self.covariates.select_columns(&cols),
            covariate_names: names.to_vec(),
            treatment: self.treatment.clone(),
            source: self.source.clone(),
            known_treat_prob: self.known_treat_prob,
        })
    }

    /// Rows `idx` (repeats allowed). The result keeps the row-level rules
    /// but is not re-checked for trial positivity, so source-specific
    /// subsets are representable.
    pub fn subset(&self, idx: &[usize]) -> TrialDataset {
        TrialDataset {
            outcome: idx.iter().map(|&i| self.outcome[i]).collect(),
            covariates: self.covariates.select_rows(idx),
            covariate_names: self.covariate_names.clone(),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            source: idx.iter().map(|&i| self.source[i]).collect(),
            known_treat_prob: self.known_treat_prob,
        }
    }
}

/// Partitions rows by source, preserving their order within each part.
pub fn split_by_source(ds: &TrialDataset) -> (TrialDataset, TrialDataset) {
    let rct = ds.rows_where(|_, d| d == 1);
    let ec = ds.rows_where(|_, d| d == 0);
    (ds.subset(&rct), ds.subset(&ec))
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "N/A" | "NULL" | "null")
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64, DataError> {
    let cell = cell.trim();
    if is_missing(cell) {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>().map_err(|_| DataError::Parse {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

/// Reads a dataset from CSV text with a header row.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<TrialDataset, DataError> {
    if schema.covariates.is_empty() {
        return Err(DataError::Schema("at least one covariate column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::Schema(format!("missing column '{name}'")))
    };
    let y_col = find(&schema.outcome)?;
    let a_col = find(&schema.treatment)?;
    let d_col = find(&schema.source)?;
    let x_cols: Vec<usize> = schema.covariates.iter().map(|c| find(c)).collect::<Result<_, _>>()?;

    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut d = Vec::new();
    let mut x: Vec<f64> = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let row = k + 1;
        let get = |col: usize, name: &str| parse_cell(record.get(col).unwrap_or(""), row, name);
        y.push(get(y_col, &schema.outcome)?);
        a.push(get(a_col, &schema.treatment)?);
        d.push(get(d_col, &schema.source)?);
        for (&c, name) in x_cols.iter().zip(&schema.covariates) {
            x.push(get(c, name)?);
        }
    }
    let n = y.len();
    let covariates = DMatrix::from_row_slice(n, x_cols.len(), &x);
    let report = validate(&y, &covariates, &a, &d);
    if !report.passed {
        return Err(DataError::Validation(report));
    }
    TrialDataset::new(
        y,
        covariates,
        schema.covariates.clone(),
        a.iter().map(|&v| v as u8).collect(),
        d.iter().map(|&v| v as u8).collect(),
        schema.known_treat_prob,
    )
}

/// Loads a dataset from a CSV file; rows keep their file order.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<TrialDataset, DataError> {
    read_dataset(File::open(path)?, schema)
}

/// Writes a dataset as CSV using the column names of `schema`
/// (outcome, covariates, treatment, source).
pub fn write_dataset<W: Write>(ds: &TrialDataset, schema: &Schema, writer: W) -> Result<(), DataError> {
    if schema.covariates.len() != ds.n_covariates() {
        return Err(DataError::Schema(format!(
            "schema names {} covariates, dataset has {}",
            schema.covariates.len(),
            ds.n_covariates()
        )));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![schema.outcome.clone()];
    header.extend(schema.covariates.iter().cloned());
    header.push(schema.treatment.clone());
    header.push(schema.source.clone());
    wtr.write_record(&header)?;
    for i in 0..ds.n_rows() {
        let mut rec = vec![ds.outcome[i].to_string()];
        rec.extend(ds.covariates.row(i).iter().map(|v| v.to_string()));
        rec.push(ds.treatment[i].to_string());
        rec.push(ds.source[i].to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Schema matching the dataset's own covariate names and generic role names.
pub fn default_schema(ds: &TrialDataset) -> Schema {
    Schema {
        outcome: "y".into(),
        treatment: "a".into(),
        source: "d".into(),
        covariates: ds.covariate_names.clone(),
        known_treat_prob: ds.known_treat_prob,
    }
}
