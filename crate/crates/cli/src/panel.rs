//! Two-period collapse of panel data: per-unit means before and after a
//! cutoff period.

use std::io::{Read, Write};

use robinf_core::{ClusterMap, Dataset};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::ingest::is_missing;

/// Name of the indicator column added to collapsed data (1 = after cutoff).
pub const POST: &str = "post";

#[derive(Debug, Clone)]
pub struct Collapsed {
    pub data: Dataset,
    /// Units lacking pre-cutoff or post-cutoff rows.
    pub dropped_units: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseSummary {
    pub units_kept: usize,
    pub dropped_units: usize,
    pub rows_read: usize,
    pub rows_written: usize,
}

/// Rows of each unit split at the cutoff, in unit first-appearance order.
/// Returns the (pre, post) row lists of complete units and the number of
/// units with only one side.
fn split_units(units: &[usize], n_units: usize, period: &[f64], cutoff: f64) -> (Vec<[Vec<usize>; 2]>, usize) {
    let mut cells: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; n_units];
    for (i, (&u, &t)) in units.iter().zip(period).enumerate() {
        cells[u][usize::from(t > cutoff)].push(i);
    }
    let total = cells.len();
    let kept: Vec<_> = cells.into_iter().filter(|[a, b]| !a.is_empty() && !b.is_empty()).collect();
    let dropped = total - kept.len();
    (kept, dropped)
}

fn mean(rows: &[usize], values: impl Fn(usize) -> f64) -> f64 {
    rows.iter().map(|&i| values(i)).sum::<f64>() / rows.len() as f64
}

/// Averages outcome, regressors and treatment within each (unit, side)
/// cell, where a row is "pre" when `period <= cutoff`. Each kept unit yields
/// its pre row followed by its post row; a `post` indicator is appended to
/// the regressors. `unit` names a cluster dimension and stays attached;
/// other cluster dimensions survive only when constant within every cell.
pub fn collapse_periods(data: &Dataset, unit: &str, period: &str, cutoff: f64) -> Result<Collapsed> {
    let units = data
        .cluster(unit)
        .ok_or_else(|| robinf_core::Error::UnknownColumn(unit.to_string()))?;
    let names = data.column_names();
    let p_col = names
        .iter()
        .position(|n| n == period)
        .ok_or_else(|| robinf_core::Error::UnknownColumn(period.to_string()))?;
    if names.iter().any(|n| n == POST) {
        return Err(CliError::Config(format!("a column named '{POST}' already exists")));
    }
    let x = data.covariates();
    let period_values: Vec<f64> = x.column(p_col).iter().copied().collect();
    let (cells, dropped_units) = split_units(units.labels(), units.n_clusters(), &period_values, cutoff);
    if cells.is_empty() {
        return Err(CliError::EmptyAfterFiltering { dropped: data.n_rows() });
    }
    let ordered: Vec<&Vec<usize>> = cells.iter().flat_map(|[a, b]| [a, b]).collect();

    let y = data.outcome();
    let outcome: Vec<f64> = ordered.iter().map(|rows| mean(rows, |i| y[i])).collect();
    let mut columns: Vec<(String, Vec<f64>)> = names
        .iter()
        .enumerate()
        .map(|(j, name)| (name.clone(), ordered.iter().map(|rows| mean(rows, |i| x[(i, j)])).collect()))
        .collect();
    columns.push((POST.to_string(), (0..ordered.len()).map(|r| (r % 2) as f64).collect()));

    let mut notes = Vec::new();
    let mut treatment = None;
    if let Some((name, t)) = data.treatment() {
        let means: Vec<f64> = ordered.iter().map(|rows| mean(rows, |i| t[i])).collect();
        if means.iter().all(|&v| v == 0.0 || v == 1.0) {
            treatment = Some((name.to_string(), means));
        } else {
            notes.push(format!("treatment '{name}' varies within cells; kept as a regressor of shares"));
            columns.push((name.to_string(), means));
        }
    }

    let mut out = Dataset::new(data.outcome_name(), outcome, columns)?;
    let unit_labels = cells.iter().enumerate().flat_map(|(u, _)| [u, u]);
    out = out.with_clusters(ClusterMap::from_labels(unit, unit_labels))?;
    for map in data.clusters().filter(|m| m.dimension() != unit) {
        let labels = map.labels();
        let constant = ordered.iter().all(|rows| rows.iter().all(|&i| labels[i] == labels[rows[0]]));
        if constant {
            let collapsed = ClusterMap::from_labels(map.dimension(), ordered.iter().map(|rows| labels[rows[0]]));
            out = out.with_clusters(collapsed)?;
        } else {
            notes.push(format!("cluster dimension '{}' varies within cells and was dropped", map.dimension()));
        }
    }
    if let Some((name, values)) = treatment {
        out = out.with_treatment(name, values)?;
    }
    if dropped_units > 0 {
        notes.push(format!("{dropped_units} unit(s) with rows on only one side of the cutoff were dropped"));
    }
    Ok(Collapsed {
        data: out,
        dropped_units,
        notes,
    })
}

/// CSV form of [`collapse_periods`]. Numeric columns are averaged (missing
/// cells ignored); text columns are kept when constant within a cell and
/// left blank otherwise. Output columns: unit, the remaining input columns in
/// order, then `post`.
pub fn collapse_csv<R: Read, W: Write>(
    input: R,
    output: W,
    unit: &str,
    period: &str,
    cutoff: f64,
) -> Result<CollapseSummary> {
    let parse_err = |line: u64, column: &str, message: String| CliError::Parse {
        line,
        column: column.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(input);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, "", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Core(robinf_core::Error::UnknownColumn(name.to_string())))
    };
    let (u_col, p_col) = (find(unit)?, find(period)?);
    if headers.iter().any(|h| h == POST) {
        return Err(CliError::Config(format!("a column named '{POST}' already exists")));
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut unit_keys = Vec::new();
    let mut periods = Vec::new();
    let mut rows_read = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), "", e.to_string()))?;
        rows_read += 1;
        let line = record.position().map_or(0, |p| p.line());
        let cells: Vec<String> = record.iter().map(|c| c.trim().to_string()).collect();
        let (u, t) = (&cells[u_col], &cells[p_col]);
        if is_missing(u) || is_missing(t) {
            continue;
        }
        let t: f64 = t
            .parse()
            .map_err(|_| parse_err(line, period, format!("'{t}' is not a number")))?;
        unit_keys.push(u.clone());
        periods.push(t);
        rows.push(cells);
    }
    let units = ClusterMap::from_labels(unit, unit_keys.iter().cloned());
    let mut first_key = vec![String::new(); units.n_clusters()];
    for (k, &u) in unit_keys.iter().zip(units.labels()).rev() {
        first_key[u] = k.clone();
    }
    let (cells, dropped_units) = split_units(units.labels(), units.n_clusters(), &periods, cutoff);
    let cell_units: Vec<usize> = cells.iter().map(|[a, _]| units.labels()[a[0]]).collect();

    let other: Vec<usize> = (0..headers.len()).filter(|&j| j != u_col).collect();
    let numeric: Vec<bool> = other
        .iter()
        .map(|&j| rows.iter().all(|r| is_missing(&r[j]) || r[j].parse::<f64>().is_ok()))
        .collect();

    let mut w = csv::Writer::from_writer(output);
    let io = |e: csv::Error| CliError::Config(format!("cannot write output: {e}"));
    let mut header: Vec<&str> = vec![unit];
    header.extend(other.iter().map(|&j| headers[j].as_str()));
    header.push(POST);
    w.write_record(&header).map_err(io)?;
    let mut rows_written = 0;
    for (c, pair) in cells.iter().enumerate() {
        for (side, members) in pair.iter().enumerate() {
            let mut out = vec![first_key[cell_units[c]].clone()];
            for (&j, &is_num) in other.iter().zip(&numeric) {
                let present: Vec<&str> = members.iter().map(|&i| rows[i][j].as_str()).filter(|v| !is_missing(v)).collect();
                let cell = if is_num {
                    if present.is_empty() {
                        String::new()
                    } else {
                        let sum: f64 = present.iter().map(|v| v.parse::<f64>().unwrap_or(0.0)).sum();
                        (sum / present.len() as f64).to_string()
                    }
                } else if present.windows(2).all(|p| p[0] == p[1]) {
                    present.first().map_or(String::new(), |v| v.to_string())
                } else {
                    String::new()
                };
                out.push(cell);
            }
            out.push(side.to_string());
            w.write_record(&out).map_err(io)?;
            rows_written += 1;
        }
    }
    w.flush().map_err(|e| CliError::Config(format!("cannot write output: {e}")))?;
    Ok(CollapseSummary {
        units_kept: cells.len(),
        dropped_units,
        rows_read,
        rows_written,
    })
}
