use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_indexed, ResamplePlan, Scheme};
use crate::data::{Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::regression::Design;

/// How treatment was assigned in the experiment being re-randomized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssignmentScheme {
    /// Fixed number of treated units, every subset equally likely.
    #[default]
    Complete,
    /// Each unit treated independently with probability `p`.
    Bernoulli { p: f64 },
    /// Complete randomization of whole clusters (the plan's cluster map).
    Cluster,
}

impl std::str::FromStr for AssignmentScheme {
    type Err = Error;

    /// `complete`, `cluster`, or `bernoulli:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "complete" => Ok(AssignmentScheme::Complete),
            "cluster" => Ok(AssignmentScheme::Cluster),
            _ => match lower.strip_prefix("bernoulli:").map(str::parse::<f64>) {
                Some(Ok(p)) if p > 0.0 && p < 1.0 => Ok(AssignmentScheme::Bernoulli { p }),
                _ => Err(Error::UnknownAssignmentScheme(s.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiResult {
    pub coef: String,
    pub observed: f64,
    pub p_value: f64,
    /// Treatment coefficient under each evaluated reassignment, in
    /// enumeration (or replication) order.
    pub null_distribution: Vec<f64>,
    pub exhaustive: bool,
    /// Number of possible assignments under the scheme (saturating).
    pub assignments_possible: u64,
    /// Reassignments skipped because the refit was rank deficient.
    pub skipped: usize,
    pub note: String,
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

struct Units {
    /// Unit index of each row.
    of_row: Vec<usize>,
    count: usize,
    treated: usize,
}

fn units_for(data: &Dataset, plan: &ResamplePlan, treatment: &[f64]) -> Result<Units> {
    match plan.assignment {
        AssignmentScheme::Cluster => {
            let map = plan.cluster_map.as_ref().ok_or_else(|| {
                Error::InvalidArgument("cluster-level assignment needs a cluster map".into())
            })?;
            if map.len() != data.n_rows() {
                return Err(Error::DimensionMismatch {
                    what: format!("cluster labels '{}'", map.dimension()),
                    expected: data.n_rows(),
                    found: map.len(),
                });
            }
            let mut status = vec![None; map.n_clusters()];
            for (row, &c) in map.labels().iter().enumerate() {
                match status[c] {
                    None => status[c] = Some(treatment[row]),
                    Some(t) if t != treatment[row] => {
                        return Err(Error::InvalidArgument(format!(
                            "treatment varies within cluster {c} of '{}'",
                            map.dimension()
                        )))
                    }
                    _ => {}
                }
            }
            Ok(Units {
                of_row: map.labels().to_vec(),
                count: map.n_clusters(),
                treated: status.iter().filter(|s| **s == Some(1.0)).count(),
            })
        }
        _ => Ok(Units {
            of_row: (0..data.n_rows()).collect(),
            count: data.n_rows(),
            treated: treatment.iter().filter(|&&t| t == 1.0).count(),
        }),
    }
}

/// Treatment coefficient after swapping in a new assignment, or `None` when
/// the reassigned design is rank deficient.
fn reassigned_effect(
    x: &DMatrix<f64>,
    names: &[String],
    y: &DVector<f64>,
    t_col: usize,
    units: &Units,
    treated_units: &[bool],
) -> Result<Option<f64>> {
    let mut xr = x.clone();
    for (row, &u) in units.of_row.iter().enumerate() {
        xr[(row, t_col)] = if treated_units[u] { 1.0 } else { 0.0 };
    }
    match Design::new(xr, names.to_vec()) {
        Ok(d) => Ok(Some(d.solve(y)[t_col])),
        Err(Error::RankDeficient { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Randomization inference for the treatment coefficient under the sharp
/// null of no effect.
///
/// Outcomes stay fixed; treatment is reassigned according to
/// `plan.assignment` and the model refit. With at most
/// `plan.exhaustive_threshold` possible assignments every one is evaluated
/// (including the realized one) and the p-value is the exact share with
/// |effect| at least the observed |effect| (probability-weighted under
/// Bernoulli assignment). Otherwise `plan.replications` random
/// reassignments are drawn and the p-value is the share of those draws,
/// without adding the observed statistic.
pub fn randomization_inference(
    data: &Dataset,
    spec: &ModelSpec,
    plan: &ResamplePlan,
) -> Result<RiResult> {
    plan.validate()?;
    if plan.scheme != Scheme::RandomizationInference {
        return Err(Error::InvalidArgument(format!(
            "plan scheme {:?} is not randomization inference",
            plan.scheme
        )));
    }
    let (_, treatment) = data.treatment().ok_or(Error::NoTreatment)?;
    let spec = ModelSpec {
        include_treatment: true,
        ..spec.clone()
    };
    let t_col = spec.treatment_index().expect("treatment is included");
    let (x, names) = data.design_matrix(&spec)?;
    let y = DVector::from_column_slice(data.outcome());
    let observed = Design::new(x.clone(), names.clone())?.solve(&y)[t_col];
    let units = units_for(data, plan, treatment)?;

    let y_scale = y.amax();
    let tol = 1e-9 * (observed.abs() + y_scale);
    let extreme = |d: f64| d.abs() >= observed.abs() - tol;

    let possible = match plan.assignment {
        AssignmentScheme::Bernoulli { p } => {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::UnknownAssignmentScheme(format!("bernoulli:{p}")));
            }
            if units.count >= 64 {
                u64::MAX
            } else {
                1u64 << units.count
            }
        }
        _ => binomial(units.count as u64, units.treated as u64),
    };

    if possible <= plan.exhaustive_threshold {
        // (assignment, probability weight)
        let assignments: Vec<(Vec<bool>, f64)> = match plan.assignment {
            AssignmentScheme::Bernoulli { p } => (0..possible)
                .map(|mask| {
                    let a: Vec<bool> = (0..units.count).map(|u| mask >> u & 1 == 1).collect();
                    let n1 = a.iter().filter(|&&t| t).count() as i32;
                    let w = p.powi(n1) * (1.0 - p).powi(units.count as i32 - n1);
                    (a, w)
                })
                .collect(),
            _ => combinations(units.count, units.treated)
                .into_iter()
                .map(|set| {
                    let mut a = vec![false; units.count];
                    set.into_iter().for_each(|u| a[u] = true);
                    (a, 1.0)
                })
                .collect(),
        };
        let effects = assignments
            .par_iter()
            .map(|(a, _)| reassigned_effect(&x, &names, &y, t_col, &units, a))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        let mut hit = 0.0;
        let mut null_distribution = Vec::with_capacity(effects.len());
        let mut skipped = 0;
        for ((_, w), effect) in assignments.iter().zip(effects) {
            match effect {
                Some(d) => {
                    total += w;
                    if extreme(d) {
                        hit += w;
                    }
                    null_distribution.push(d);
                }
                None => skipped += 1,
            }
        }
        return Ok(RiResult {
            coef: names[t_col].clone(),
            observed,
            p_value: (hit / total).min(1.0),
            null_distribution,
            exhaustive: true,
            assignments_possible: possible,
            skipped,
            note: "exhaustive enumeration; the realized assignment is part of the reference set"
                .into(),
        });
    }

    let budget = 100 * plan.replications;
    let redraws = AtomicUsize::new(0);
    let draws = run_indexed(plan.replications, plan.seed, plan.workers, |_, rng| loop {
        let a: Vec<bool> = match plan.assignment {
            AssignmentScheme::Bernoulli { p } => (0..units.count).map(|_| rng.random_bool(p)).collect(),
            _ => {
                let mut a = vec![false; units.count];
                for u in sample(rng, units.count, units.treated) {
                    a[u] = true;
                }
                a
            }
        };
        if let Some(d) = reassigned_effect(&x, &names, &y, t_col, &units, &a)? {
            return Ok(d);
        }
        if redraws.fetch_add(1, Ordering::Relaxed) + 1 > budget {
            return Err(Error::DegenerateResample { redraws: budget });
        }
    })?;
    let hits = draws.iter().filter(|&&d| extreme(d)).count();
    Ok(RiResult {
        coef: names[t_col].clone(),
        observed,
        p_value: hits as f64 / draws.len() as f64,
        null_distribution: draws,
        exhaustive: false,
        assignments_possible: possible,
        skipped: redraws.into_inner(),
        note: "Monte Carlo reassignment; the observed statistic is not added to the null draws"
            .into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_rows() -> Dataset {
        Dataset::new("y", vec![1.0, 2.0, 3.0, 4.0], vec![])
            .unwrap()
            .with_treatment("t", vec![0.0, 0.0, 1.0, 1.0])
            .unwrap()
    }

    #[test]
    fn combination_enumeration() {
        let c = combinations(4, 2);
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], vec![0, 1]);
        assert_eq!(c[5], vec![2, 3]);
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(30, 15), 155_117_520);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn exhaustive_four_row_fixture() {
        let plan = ResamplePlan::new(Scheme::RandomizationInference, 1, 0);
        let res = randomization_inference(&four_rows(), &ModelSpec::default(), &plan).unwrap();
        assert!(res.exhaustive);
        assert!((res.observed - 2.0).abs() < 1e-12);
        let mut d: Vec<f64> = res.null_distribution.iter().map(|v| (v * 1e9).round() / 1e9).collect();
        d.sort_by(f64::total_cmp);
        assert_eq!(d, vec![-2.0, -1.0, 0.0, 0.0, 1.0, 2.0]);
        assert!((res.p_value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_outcome_gives_p_one() {
        let data = Dataset::new("y", vec![5.0; 6], vec![])
            .unwrap()
            .with_treatment("t", vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
            .unwrap();
        let plan = ResamplePlan::new(Scheme::RandomizationInference, 1, 0);
        assert_eq!(randomization_inference(&data, &ModelSpec::default(), &plan).unwrap().p_value, 1.0);
    }

    #[test]
    fn needs_treatment_and_known_scheme() {
        let data = Dataset::new("y", vec![1.0, 2.0, 3.0], vec![]).unwrap();
        let plan = ResamplePlan::new(Scheme::RandomizationInference, 10, 0);
        assert_eq!(
            randomization_inference(&data, &ModelSpec::default(), &plan).unwrap_err(),
            Error::NoTreatment
        );
        assert!(matches!(
            "stratified".parse::<AssignmentScheme>(),
            Err(Error::UnknownAssignmentScheme(_))
        ));
        assert_eq!(
            "bernoulli:0.3".parse::<AssignmentScheme>().unwrap(),
            AssignmentScheme::Bernoulli { p: 0.3 }
        );
    }

    #[test]
    fn bernoulli_exhaustive_skips_degenerate_assignments() {
        let plan = ResamplePlan::new(Scheme::RandomizationInference, 1, 0)
            .with_assignment(AssignmentScheme::Bernoulli { p: 0.5 });
        let res = randomization_inference(&four_rows(), &ModelSpec::default(), &plan).unwrap();
        // all-treated and all-control make the treatment column collinear
        assert_eq!(res.skipped, 2);
        assert_eq!(res.null_distribution.len(), 14);
        assert_eq!(res.assignments_possible, 16);
    }
}
