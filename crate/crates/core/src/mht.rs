//! Multiple-testing corrections over a family of p-values.
//!
//! FWER: Bonferroni, Holm step-down, Westfall-Young and Romano-Wolf max-T
//! step-down. FDR: Benjamini-Hochberg step-up and the two-stage
//! Benjamini-Krieger-Yekutieli sharpened q-values.
//!
//! Every method reports an adjusted p-value (or q-value) per hypothesis in
//! the family's original order, together with the decision at the family's
//! alpha. Hypotheses are ordered by `(p, id)` so tied p-values are handled
//! identically regardless of input order.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum replicate count for the resampling-based corrections.
pub const MIN_REPLICATES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub raw_p: f64,
    pub statistic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueFamily {
    hypotheses: Vec<Hypothesis>,
    alpha: f64,
}

impl PValueFamily {
    pub fn new(hypotheses: Vec<Hypothesis>, alpha: f64) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::InvalidArgument("hypothesis family is empty".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
        }
        if let Some(h) = hypotheses.iter().find(|h| !(0.0..=1.0).contains(&h.raw_p)) {
            return Err(Error::InvalidArgument(format!(
                "p-value of '{}' is outside [0, 1]: {}",
                h.id, h.raw_p
            )));
        }
        Ok(PValueFamily { hypotheses, alpha })
    }

    /// Family with ids `H1..Hm` and no statistics.
    pub fn from_p_values(p: &[f64], alpha: f64) -> Result<Self> {
        Self::new(
            p.iter()
                .enumerate()
                .map(|(i, &raw_p)| Hypothesis {
                    id: format!("H{}", i + 1),
                    raw_p,
                    statistic: None,
                })
                .collect(),
            alpha,
        )
    }

    /// Family with ids `H1..Hm` carrying test statistics.
    pub fn from_statistics(p: &[f64], statistics: &[f64], alpha: f64) -> Result<Self> {
        if p.len() != statistics.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} p-values but {} statistics",
                p.len(),
                statistics.len()
            )));
        }
        Self::new(
            p.iter()
                .zip(statistics)
                .enumerate()
                .map(|(i, (&raw_p, &s))| Hypothesis {
                    id: format!("H{}", i + 1),
                    raw_p,
                    statistic: Some(s),
                })
                .collect(),
            alpha,
        )
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn m(&self) -> usize {
        self.hypotheses.len()
    }

    /// Indices sorted by ascending p, ties broken by id.
    fn order_by_p(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.m()).collect();
        idx.sort_by(|&a, &b| {
            let (ha, hb) = (&self.hypotheses[a], &self.hypotheses[b]);
            ha.raw_p
                .partial_cmp(&hb.raw_p)
                .unwrap_or(Ordering::Equal)
                .then_with(|| ha.id.cmp(&hb.id))
        });
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MhtMethod {
    Bonferroni,
    Holm,
    WestfallYoung,
    RomanoWolf,
    BenjaminiHochberg,
    BkySharpened,
}

impl MhtMethod {
    pub fn error_rate(self) -> ErrorRate {
        match self {
            MhtMethod::BenjaminiHochberg | MhtMethod::BkySharpened => ErrorRate::Fdr,
            _ => ErrorRate::Fwer,
        }
    }

    /// Whether the method needs resampled statistics.
    pub fn needs_replicates(self) -> bool {
        matches!(self, MhtMethod::WestfallYoung | MhtMethod::RomanoWolf)
    }
}

impl std::str::FromStr for MhtMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "bonferroni" => MhtMethod::Bonferroni,
            "holm" => MhtMethod::Holm,
            "wy" | "westfall-young" | "westfall_young" => MhtMethod::WestfallYoung,
            "rw" | "romano-wolf" | "romano_wolf" => MhtMethod::RomanoWolf,
            "bh" | "benjamini-hochberg" | "benjamini_hochberg" => MhtMethod::BenjaminiHochberg,
            "bky" | "sharpened" | "bky_sharpened" => MhtMethod::BkySharpened,
            other => {
                return Err(Error::InvalidArgument(format!("unknown MHT method '{other}'")))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorRate {
    Fwer,
    Fdr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhtEntry {
    pub id: String,
    pub raw_p: f64,
    /// Adjusted p-value (FWER methods) or q-value (FDR methods).
    pub adjusted: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhtReport {
    pub method: MhtMethod,
    pub error_rate: ErrorRate,
    pub alpha: f64,
    /// One entry per hypothesis, in the family's original order.
    pub entries: Vec<MhtEntry>,
}

impl MhtReport {
    fn assemble(
        method: MhtMethod,
        family: &PValueFamily,
        adjusted: Vec<f64>,
        rejected: Vec<bool>,
    ) -> Self {
        let entries = family
            .hypotheses
            .iter()
            .zip(adjusted.into_iter().zip(rejected))
            .map(|(h, (adjusted, rejected))| MhtEntry {
                id: h.id.clone(),
                raw_p: h.raw_p,
                adjusted: adjusted.clamp(0.0, 1.0),
                rejected,
            })
            .collect();
        MhtReport {
            method,
            error_rate: method.error_rate(),
            alpha: family.alpha,
            entries,
        }
    }

    pub fn adjusted(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.adjusted).collect()
    }

    pub fn rejected(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.rejected).collect()
    }

    pub fn n_rejected(&self) -> usize {
        self.entries.iter().filter(|e| e.rejected).count()
    }
}

/// Runs any method. Resampling methods need `replicates` (r x m).
pub fn correct(
    method: MhtMethod,
    family: &PValueFamily,
    replicates: Option<&DMatrix<f64>>,
) -> Result<MhtReport> {
    let need = || {
        replicates.ok_or_else(|| Error::MissingStatistics("no replicate matrix supplied".into()))
    };
    match method {
        MhtMethod::Bonferroni => Ok(bonferroni(family)),
        MhtMethod::Holm => Ok(holm(family)),
        MhtMethod::BenjaminiHochberg => Ok(benjamini_hochberg(family)),
        MhtMethod::BkySharpened => Ok(bky_sharpened(family)),
        MhtMethod::WestfallYoung => westfall_young(family, need()?),
        MhtMethod::RomanoWolf => romano_wolf(family, need()?),
    }
}

/// Reject when `p < alpha / m`; adjusted `min(1, m p)`.
pub fn bonferroni(family: &PValueFamily) -> MhtReport {
    let m = family.m() as f64;
    let cutoff = family.alpha / m;
    let (adjusted, rejected) = family
        .hypotheses
        .iter()
        .map(|h| ((m * h.raw_p).min(1.0), h.raw_p < cutoff))
        .unzip();
    MhtReport::assemble(MhtMethod::Bonferroni, family, adjusted, rejected)
}

/// Holm step-down: reject while `p_(i) < alpha / (m - i + 1)`.
pub fn holm(family: &PValueFamily) -> MhtReport {
    let m = family.m();
    let order = family.order_by_p();
    let mut adjusted = vec![0.0; m];
    let mut rejected = vec![false; m];
    let mut running = 0.0_f64;
    let mut still_rejecting = true;
    for (rank, &idx) in order.iter().enumerate() {
        let p = family.hypotheses[idx].raw_p;
        let remaining = (m - rank) as f64;
        running = running.max((remaining * p).min(1.0));
        adjusted[idx] = running;
        still_rejecting = still_rejecting && p < family.alpha / remaining;
        rejected[idx] = still_rejecting;
    }
    MhtReport::assemble(MhtMethod::Holm, family, adjusted, rejected)
}

/// Number of BH rejections at `level` for ascending `sorted_p`: the largest
/// rank `i` with `p_(i) <= i level / m`.
fn bh_count(sorted_p: &[f64], level: f64) -> usize {
    let m = sorted_p.len() as f64;
    sorted_p
        .iter()
        .enumerate()
        .rev()
        .find(|(i, &p)| p <= (*i as f64 + 1.0) * level / m)
        .map_or(0, |(i, _)| i + 1)
}

/// Benjamini-Hochberg step-up with monotone q-values
/// `q_(i) = min_{j >= i} m p_(j) / j`.
pub fn benjamini_hochberg(family: &PValueFamily) -> MhtReport {
    let m = family.m();
    let order = family.order_by_p();
    let sorted: Vec<f64> = order.iter().map(|&i| family.hypotheses[i].raw_p).collect();
    let cutoff_rank = bh_count(&sorted, family.alpha);

    let mut adjusted = vec![0.0; m];
    let mut rejected = vec![false; m];
    let mut running = 1.0_f64;
    for rank in (0..m).rev() {
        let q = sorted[rank] * m as f64 / (rank + 1) as f64;
        running = running.min(q.min(1.0));
        adjusted[order[rank]] = running;
        rejected[order[rank]] = rank < cutoff_rank;
    }
    MhtReport::assemble(MhtMethod::BenjaminiHochberg, family, adjusted, rejected)
}

/// Rejection count of the two-stage BKY procedure at FDR level `q`.
///
/// Stage 1 is BH at `q' = q / (1 + q)` with `r1` rejections. With `r1 = 0`
/// nothing is rejected, with `r1 = m` everything is; otherwise stage 2 is BH
/// at `q' m / (m - r1)`.
pub fn bky_rejections(sorted_p: &[f64], q: f64) -> usize {
    let m = sorted_p.len();
    let stage1_level = q / (1.0 + q);
    let r1 = bh_count(sorted_p, stage1_level);
    if r1 == 0 || r1 == m {
        return r1;
    }
    bh_count(sorted_p, stage1_level * m as f64 / (m - r1) as f64)
}

/// Bisection tolerance on the FDR level for sharpened q-values.
const BKY_RESOLUTION: f64 = 1e-6;

/// Sharpened q-values: for each hypothesis, the smallest level at which the
/// two-stage procedure rejects it (located by bisection).
pub fn bky_sharpened(family: &PValueFamily) -> MhtReport {
    let m = family.m();
    let order = family.order_by_p();
    let sorted: Vec<f64> = order.iter().map(|&i| family.hypotheses[i].raw_p).collect();
    let rejected_at_alpha = bky_rejections(&sorted, family.alpha);

    let mut adjusted = vec![1.0; m];
    let mut rejected = vec![false; m];
    let mut running = 0.0_f64;
    for (rank, &idx) in order.iter().enumerate() {
        let needed = rank + 1;
        let q = if bky_rejections(&sorted, 1.0) < needed {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            while hi - lo > BKY_RESOLUTION {
                let mid = 0.5 * (lo + hi);
                if bky_rejections(&sorted, mid) >= needed {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        };
        running = running.max(q);
        adjusted[idx] = running;
        rejected[idx] = rank < rejected_at_alpha;
    }
    MhtReport::assemble(MhtMethod::BkySharpened, family, adjusted, rejected)
}

fn observed_statistics(family: &PValueFamily, replicates: &DMatrix<f64>) -> Result<Vec<f64>> {
    let stats = family
        .hypotheses
        .iter()
        .map(|h| {
            h.statistic
                .map(f64::abs)
                .ok_or_else(|| Error::MissingStatistics(format!("hypothesis '{}' has no statistic", h.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    if replicates.ncols() != family.m() {
        return Err(Error::MissingStatistics(format!(
            "replicate matrix has {} columns for {} hypotheses",
            replicates.ncols(),
            family.m()
        )));
    }
    if replicates.nrows() < MIN_REPLICATES {
        return Err(Error::TooFewReplications {
            replications: replicates.nrows(),
            needed: MIN_REPLICATES,
        });
    }
    Ok(stats)
}

/// Indices sorted by descending |statistic|, ties broken by id.
fn order_by_statistic(family: &PValueFamily, stats: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..family.m()).collect();
    idx.sort_by(|&a, &b| {
        stats[b]
            .partial_cmp(&stats[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| family.hypotheses[a].id.cmp(&family.hypotheses[b].id))
    });
    idx
}

/// Max-T step-down adjusted p-values along `order`: the share of replicates
/// whose max |statistic| over the hypotheses at or after each step reaches
/// that step's observed |statistic|, made monotone along the order.
fn step_down_max_t(replicates: &DMatrix<f64>, stats: &[f64], order: &[usize]) -> Vec<f64> {
    let m = order.len();
    let r = replicates.nrows();
    let counts = (0..r)
        .into_par_iter()
        .fold(
            || vec![0usize; m],
            |mut acc, b| {
                let mut suffix_max = f64::NEG_INFINITY;
                for step in (0..m).rev() {
                    suffix_max = suffix_max.max(replicates[(b, order[step])].abs());
                    if suffix_max >= stats[order[step]] {
                        acc[step] += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0usize; m],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let mut running = 0.0_f64;
    counts
        .into_iter()
        .map(|c| {
            running = running.max(c as f64 / r as f64);
            running
        })
        .collect()
}

/// Westfall-Young max-T step-down. `replicates` holds statistics (r x m)
/// simulated under the joint null.
pub fn westfall_young(family: &PValueFamily, replicates: &DMatrix<f64>) -> Result<MhtReport> {
    let stats = observed_statistics(family, replicates)?;
    let order = order_by_statistic(family, &stats);
    let step_p = step_down_max_t(replicates, &stats, &order);
    let mut adjusted = vec![0.0; family.m()];
    let mut rejected = vec![false; family.m()];
    for (step, &idx) in order.iter().enumerate() {
        adjusted[idx] = step_p[step];
        rejected[idx] = step_p[step] <= family.alpha;
    }
    Ok(MhtReport::assemble(
        MhtMethod::WestfallYoung,
        family,
        adjusted,
        rejected,
    ))
}

/// Romano-Wolf step-down over studentized statistics. `replicates` must be
/// recentred bootstrap statistics, e.g. `(b* - b_hat) / se*`.
///
/// Rejections come from iterating: reject every active hypothesis whose
/// |statistic| exceeds the `1 - alpha` critical value of the max |replicate|
/// over the active set, drop them, and repeat until nothing new is
/// rejected. Adjusted p-values follow the same step-down order.
pub fn romano_wolf(family: &PValueFamily, replicates: &DMatrix<f64>) -> Result<MhtReport> {
    let stats = observed_statistics(family, replicates)?;
    let order = order_by_statistic(family, &stats);
    let step_p = step_down_max_t(replicates, &stats, &order);
    let r = replicates.nrows();

    let mut active: Vec<usize> = order.clone();
    let mut rejected = vec![false; family.m()];
    loop {
        let maxima: Vec<f64> = (0..r)
            .map(|b| {
                active
                    .iter()
                    .map(|&j| replicates[(b, j)].abs())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let newly: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&j| {
                let exceed = maxima.iter().filter(|&&mx| mx >= stats[j]).count();
                exceed as f64 / r as f64 <= family.alpha
            })
            .collect();
        if newly.is_empty() {
            break;
        }
        for &j in &newly {
            rejected[j] = true;
        }
        active.retain(|j| !rejected[*j]);
        if active.is_empty() {
            break;
        }
    }

    let mut adjusted = vec![0.0; family.m()];
    for (step, &idx) in order.iter().enumerate() {
        adjusted[idx] = step_p[step];
    }
    Ok(MhtReport::assemble(
        MhtMethod::RomanoWolf,
        family,
        adjusted,
        rejected,
    ))
}

/// Recentres replicate estimates at `centers` and divides by per-replicate
/// standard errors: `(b*_bj - center_j) / se*_bj`.
pub fn studentize(
    estimates: &DMatrix<f64>,
    ses: &DMatrix<f64>,
    centers: &[f64],
) -> Result<DMatrix<f64>> {
    if estimates.shape() != ses.shape() || centers.len() != estimates.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "estimates {:?}, standard errors {:?}, {} centers",
            estimates.shape(),
            ses.shape(),
            centers.len()
        )));
    }
    Ok(DMatrix::from_fn(estimates.nrows(), estimates.ncols(), |b, j| {
        let se = ses[(b, j)];
        if se > 0.0 {
            (estimates[(b, j)] - centers[j]) / se
        } else {
            0.0
        }
    }))
}
