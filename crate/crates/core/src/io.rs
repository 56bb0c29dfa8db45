//! CSV input.
//!
//! The first row is a header. Every cell must parse as a finite number;
//! missing values are rejected rather than imputed.

use crate::error::{Error, Result};
use crate::linmodel::{Dataset, NuisanceSpec, VarianceMode};
use nalgebra::DMatrix;

/// Column roles for [`read_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    /// Outcome column; the first column when `None`.
    pub outcome: Option<String>,
    /// Candidate columns, in order; every remaining column when `None`.
    pub candidates: Option<Vec<String>>,
    /// Columns adjusted for but never tested.
    pub nuisance_columns: Vec<String>,
    pub intercept: bool,
    pub variance: VarianceMode,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { outcome: None, candidates: None, nuisance_columns: Vec::new(), intercept: true, variance: VarianceMode::Profiled }
    }
}

/// A parsed numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    /// Column-major values.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    fn column(&self, name: &str) -> Result<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::UnknownVariables(vec![name.to_string()]))
    }
}

pub fn parse_table(text: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::EmptyInput);
    }
    for (i, h) in headers.iter().enumerate() {
        if h.is_empty() {
            return Err(Error::Parse(format!("column {} has an empty name", i + 1)));
        }
        if headers[..i].contains(h) {
            return Err(Error::Parse(format!("duplicate column name `{h}`")));
        }
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        // Header is line 1.
        let line = r + 2;
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Parse(format!("line {line}, column `{}`: `{cell}` is not a number", headers[j])))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("line {line}, column `{}`: non-finite value", headers[j])));
            }
            columns[j].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(Table { headers, columns })
}

/// Build a dataset from CSV text.
pub fn read_dataset(text: &str, opts: &CsvOptions) -> Result<Dataset> {
    let table = parse_table(text)?;
    dataset_from_table(&table, opts)
}

pub fn dataset_from_table(table: &Table, opts: &CsvOptions) -> Result<Dataset> {
    let outcome = opts.outcome.clone().unwrap_or_else(|| table.headers[0].clone());
    let y = table.column(&outcome)?.to_vec();
    let unknown: Vec<String> = opts
        .nuisance_columns
        .iter()
        .chain(opts.candidates.iter().flatten())
        .filter(|c| !table.headers.contains(c))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownVariables(unknown));
    }
    let candidates: Vec<String> = match &opts.candidates {
        Some(c) => c.clone(),
        None => table
            .headers
            .iter()
            .filter(|h| **h != outcome && !opts.nuisance_columns.contains(h))
            .cloned()
            .collect(),
    };
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate variables".into()));
    }
    if let Some(c) = candidates.iter().find(|c| **c == outcome || opts.nuisance_columns.contains(c)) {
        return Err(Error::InvalidInput(format!("column `{c}` cannot be both a candidate and the outcome or a nuisance")));
    }
    let n = table.rows();
    for name in &candidates {
        let col = table.column(name)?;
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::ZeroVarianceColumn(name.clone()));
        }
    }
    let x = DMatrix::from_fn(n, candidates.len(), |i, j| table.column(&candidates[j]).unwrap()[i]);
    let extra = DMatrix::from_fn(n, opts.nuisance_columns.len(), |i, j| table.column(&opts.nuisance_columns[j]).unwrap()[i]);
    let mut nuisance = NuisanceSpec::new(opts.intercept, opts.variance);
    nuisance.extra_columns = extra;
    Dataset::new(y, x, candidates, nuisance)
}
