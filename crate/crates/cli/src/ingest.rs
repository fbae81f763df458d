//! CSV ingestion with listwise deletion of rows missing a required field.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use robinf_core::{ClusterMap, Dataset};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Which CSV columns play which role. Every named column is required.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Columns {
    /// One or more outcomes; the first becomes the dataset outcome.
    pub outcomes: Vec<String>,
    pub covariates: Vec<String>,
    /// Categorical grouping columns, densified in order of first appearance.
    pub clusters: Vec<String>,
    pub treatment: Option<String>,
}

impl Columns {
    fn required(&self) -> Vec<&str> {
        self.outcomes
            .iter()
            .chain(&self.covariates)
            .chain(&self.clusters)
            .chain(&self.treatment)
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_used: usize,
    /// Rows dropped because a required field was missing.
    pub dropped: usize,
    /// For each cluster column, the original label of dense code 0, 1, ...
    pub label_mappings: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: Dataset,
    /// Every outcome column after row filtering, in `Columns::outcomes` order.
    pub outcomes: Vec<(String, Vec<f64>)>,
    pub report: IngestReport,
}

/// Cell values read as missing.
pub fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "." | "null"
    )
}

fn parse_number(cell: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| CliError::Parse {
        line,
        column: column.to_string(),
        message: format!("'{}' is not a number", cell.trim()),
    })?;
    if !v.is_finite() {
        return Err(CliError::Parse {
            line,
            column: column.to_string(),
            message: format!("'{}' is not finite", cell.trim()),
        });
    }
    Ok(v)
}

pub fn ingest_csv(path: &Path, columns: &Columns) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ingest_reader(file, columns)
}

pub fn ingest_reader<R: Read>(reader: R, columns: &Columns) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Parse {
            line: 1,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let required = columns.required();
    let index: Vec<usize> = required
        .iter()
        .map(|c| {
            position
                .get(c)
                .copied()
                .ok_or_else(|| CliError::Core(robinf_core::Error::UnknownColumn(c.to_string())))
        })
        .collect::<Result<_>>()?;

    let n_num = columns.outcomes.len() + columns.covariates.len();
    let n_lab = columns.clusters.len();
    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); n_num];
    let mut labels: Vec<Vec<String>> = vec![Vec::new(); n_lab];
    let mut treatment = Vec::new();
    let mut rows_read = 0;
    let mut dropped = 0;

    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            column: String::new(),
            message: e.to_string(),
        })?;
        rows_read += 1;
        let line = record.position().map_or(0, |p| p.line());
        let cells: Vec<&str> = index.iter().map(|&i| record.get(i).unwrap_or("")).collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        for (j, col) in numeric.iter_mut().enumerate() {
            col.push(parse_number(cells[j], line, required[j])?);
        }
        for (j, col) in labels.iter_mut().enumerate() {
            col.push(cells[n_num + j].trim().to_string());
        }
        if columns.treatment.is_some() {
            treatment.push(parse_number(cells[n_num + n_lab], line, required[n_num + n_lab])?);
        }
    }
    let rows_used = rows_read - dropped;
    if rows_used == 0 {
        return Err(CliError::EmptyAfterFiltering { dropped });
    }

    let mut numeric = numeric.into_iter();
    let outcomes: Vec<(String, Vec<f64>)> = columns
        .outcomes
        .iter()
        .map(|name| (name.clone(), numeric.next().expect("outcome column")))
        .collect();
    let covariates: Vec<(String, Vec<f64>)> = columns.covariates.iter().cloned().zip(numeric).collect();
    let (first_name, first_values) = outcomes
        .first()
        .cloned()
        .ok_or_else(|| CliError::Config("no outcome column given".into()))?;
    let mut data = Dataset::new(first_name, first_values, covariates)?;

    let mut label_mappings = BTreeMap::new();
    for (name, raw) in columns.clusters.iter().zip(labels) {
        let map = ClusterMap::from_labels(name.clone(), raw.iter().cloned());
        let mut originals = vec![String::new(); map.n_clusters()];
        for (code, label) in map.labels().iter().zip(raw) {
            originals[*code] = label;
        }
        label_mappings.insert(name.clone(), originals);
        data = data.with_clusters(map)?;
    }
    if let Some(name) = &columns.treatment {
        data = data.with_treatment(name.clone(), treatment)?;
    }
    Ok(Ingested {
        data,
        outcomes,
        report: IngestReport {
            rows_read,
            rows_used,
            dropped,
            label_mappings,
        },
    })
}
