//! In-memory tabular inputs: outcome, regressors, cluster labels, treatment.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Dense cluster assignment along one dimension.
///
/// Labels are always `0..n_clusters`, numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterMap {
    dimension: String,
    labels: Vec<usize>,
    n_clusters: usize,
}

impl ClusterMap {
    /// Builds a map from arbitrary hashable labels, densifying them.
    pub fn from_labels<T, I>(dimension: impl Into<String>, labels: I) -> Self
    where
        T: Eq + std::hash::Hash,
        I: IntoIterator<Item = T>,
    {
        let mut seen: HashMap<T, usize> = HashMap::new();
        let mut dense = Vec::new();
        for label in labels {
            let next = seen.len();
            dense.push(*seen.entry(label).or_insert(next));
        }
        ClusterMap {
            dimension: dimension.into(),
            n_clusters: seen.len(),
            labels: dense,
        }
    }

    /// Every row in its own cluster.
    pub fn singletons(dimension: impl Into<String>, n: usize) -> Self {
        ClusterMap {
            dimension: dimension.into(),
            labels: (0..n).collect(),
            n_clusters: n,
        }
    }

    /// Clusters formed by crossing two dimensions (e.g. group x time).
    pub fn intersect(&self, other: &ClusterMap) -> Result<ClusterMap> {
        if self.labels.len() != other.labels.len() {
            return Err(Error::DimensionMismatch {
                what: format!("cluster dimension '{}'", other.dimension),
                expected: self.labels.len(),
                found: other.labels.len(),
            });
        }
        Ok(ClusterMap::from_labels(
            format!("{}x{}", self.dimension, other.dimension),
            self.labels.iter().copied().zip(other.labels.iter().copied()),
        ))
    }

    pub fn dimension(&self) -> &str {
        &self.dimension
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices of each cluster, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (row, &c) in self.labels.iter().enumerate() {
            out[c].push(row);
        }
        out
    }

    /// Size of each cluster, in label order.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_clusters];
        for &c in &self.labels {
            out[c] += 1;
        }
        out
    }

    /// Restricts the map to a subset of rows and re-densifies.
    pub fn select_rows(&self, rows: &[usize]) -> ClusterMap {
        ClusterMap::from_labels(self.dimension.clone(), rows.iter().map(|&r| self.labels[r]))
    }
}

/// Outcome, regressors and optional design labels for one analysis.
///
/// Regressors are stored without an intercept; [`ModelSpec`] decides whether
/// the design matrix gets one (it does by default, as column 0).
#[derive(Debug, Clone)]
pub struct Dataset {
    outcome_name: String,
    outcome: Vec<f64>,
    covariates: DMatrix<f64>,
    column_names: Vec<String>,
    clusters: BTreeMap<String, ClusterMap>,
    treatment: Option<(String, Vec<f64>)>,
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(row) => Err(Error::NonFinite {
            what: what.to_string(),
            row,
        }),
        None => Ok(()),
    }
}

impl Dataset {
    /// Builds a dataset from named regressor columns. Every column must have
    /// the outcome's length and contain only finite values.
    pub fn new(
        outcome_name: impl Into<String>,
        outcome: Vec<f64>,
        columns: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let outcome_name = outcome_name.into();
        check_finite(&outcome_name, &outcome)?;
        let n = outcome.len();
        let mut names = Vec::with_capacity(columns.len());
        let mut covariates = DMatrix::zeros(n, columns.len());
        for (j, (name, values)) in columns.into_iter().enumerate() {
            if values.len() != n {
                return Err(Error::DimensionMismatch {
                    what: format!("column '{name}'"),
                    expected: n,
                    found: values.len(),
                });
            }
            check_finite(&name, &values)?;
            covariates.set_column(j, &nalgebra::DVector::from_vec(values));
            names.push(name);
        }
        Ok(Dataset {
            outcome_name,
            outcome,
            covariates,
            column_names: names,
            clusters: BTreeMap::new(),
            treatment: None,
        })
    }

    /// Attaches a cluster dimension; labels of any hashable type are densified.
    pub fn with_clusters(mut self, map: ClusterMap) -> Result<Self> {
        if map.len() != self.n_rows() {
            return Err(Error::DimensionMismatch {
                what: format!("cluster labels '{}'", map.dimension()),
                expected: self.n_rows(),
                found: map.len(),
            });
        }
        self.clusters.insert(map.dimension().to_string(), map);
        Ok(self)
    }

    /// Attaches a binary treatment indicator (values must be 0 or 1).
    pub fn with_treatment(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.n_rows() {
            return Err(Error::DimensionMismatch {
                what: format!("treatment '{name}'"),
                expected: self.n_rows(),
                found: values.len(),
            });
        }
        if let Some(row) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "treatment '{name}' must be 0/1, row {row} has {}",
                values[row]
            )));
        }
        self.treatment = Some((name, values));
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn cluster(&self, dimension: &str) -> Option<&ClusterMap> {
        self.clusters.get(dimension)
    }

    pub fn clusters(&self) -> impl Iterator<Item = &ClusterMap> {
        self.clusters.values()
    }

    pub fn treatment(&self) -> Option<(&str, &[f64])> {
        self.treatment
            .as_ref()
            .map(|(name, values)| (name.as_str(), values.as_slice()))
    }

    /// Copy of the dataset with the outcome replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n_rows() {
            return Err(Error::DimensionMismatch {
                what: "outcome".into(),
                expected: self.n_rows(),
                found: outcome.len(),
            });
        }
        check_finite(&self.outcome_name, &outcome)?;
        let mut out = self.clone();
        out.outcome = outcome;
        Ok(out)
    }

    pub fn renamed_outcome(mut self, name: impl Into<String>) -> Self {
        self.outcome_name = name.into();
        self
    }

    /// Copy of the dataset with the treatment vector replaced.
    pub fn with_treatment_values(&self, values: Vec<f64>) -> Result<Self> {
        let name = self
            .treatment
            .as_ref()
            .map(|(n, _)| n.clone())
            .ok_or(Error::NoTreatment)?;
        self.clone().with_treatment(name, values)
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Builds the design matrix for a model: intercept first (unless
    /// suppressed), then treatment (if requested), then selected regressors.
    pub fn design_matrix(&self, spec: &ModelSpec) -> Result<(DMatrix<f64>, Vec<String>)> {
        let n = self.n_rows();
        let selected: Vec<usize> = match &spec.covariates {
            Some(cols) => cols
                .iter()
                .map(|c| self.column_index(c))
                .collect::<Result<_>>()?,
            None => (0..self.column_names.len()).collect(),
        };
        let mut names = Vec::new();
        let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
        if spec.intercept {
            names.push(INTERCEPT.to_string());
            cols.push(nalgebra::DVector::from_element(n, 1.0));
        }
        if spec.include_treatment {
            let (name, values) = self.treatment().ok_or(Error::NoTreatment)?;
            names.push(name.to_string());
            cols.push(nalgebra::DVector::from_column_slice(values));
        }
        for j in selected {
            names.push(self.column_names[j].clone());
            cols.push(self.covariates.column(j).into_owned());
        }
        if cols.is_empty() {
            return Err(Error::InvalidArgument("model has no regressors".into()));
        }
        Ok((DMatrix::from_columns(&cols), names))
    }

    /// Subset of rows, in the given order (duplicates allowed). Cluster maps
    /// are restricted and re-densified.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let outcome = rows.iter().map(|&r| self.outcome[r]).collect();
        let covariates = self.covariates.select_rows(rows);
        let clusters = self
            .clusters
            .iter()
            .map(|(k, m)| (k.clone(), m.select_rows(rows)))
            .collect();
        let treatment = self
            .treatment
            .as_ref()
            .map(|(name, t)| (name.clone(), rows.iter().map(|&r| t[r]).collect()));
        Dataset {
            outcome_name: self.outcome_name.clone(),
            outcome,
            covariates,
            column_names: self.column_names.clone(),
            clusters,
            treatment,
        }
    }
}

/// Name given to the constant column.
pub const INTERCEPT: &str = "(Intercept)";

/// Which columns enter the regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelSpec {
    /// Regressor names; `None` uses every regressor column.
    pub covariates: Option<Vec<String>>,
    pub intercept: bool,
    /// Put the treatment indicator right after the intercept.
    pub include_treatment: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            covariates: None,
            intercept: true,
            include_treatment: false,
        }
    }
}

impl ModelSpec {
    pub fn with_covariates<S: Into<String>>(cols: impl IntoIterator<Item = S>) -> Self {
        ModelSpec {
            covariates: Some(cols.into_iter().map(Into::into).collect()),
            ..Default::default()
        }
    }

    /// Intercept plus treatment plus the named regressors.
    pub fn treatment_effect<S: Into<String>>(cols: impl IntoIterator<Item = S>) -> Self {
        ModelSpec {
            covariates: Some(cols.into_iter().map(Into::into).collect()),
            intercept: true,
            include_treatment: true,
        }
    }

    /// Index of the treatment coefficient in the fitted vector.
    pub fn treatment_index(&self) -> Option<usize> {
        self.include_treatment.then_some(usize::from(self.intercept))
    }
}
