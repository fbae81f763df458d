use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_indexed, ResampleDistribution, ResamplePlan, Scheme, WeightLaw};
use crate::data::{ClusterMap, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::regression::{fit_ols, restricted_fit, Design, FitResult};
use crate::vcov::{compute_vcov, VcovEstimate, VcovKind};

/// Index arithmetic tolerance: `r * alpha` products that should be integers
/// often land a hair above them in floating point.
const INDEX_EPS: f64 = 1e-9;

/// Reference point subtracted from replication estimates in bootstrap-t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TCentering {
    /// Mean of the bootstrap draws.
    #[default]
    BootstrapMean,
    /// Coefficient of the bootstrap DGP (original or restricted estimate).
    Truth,
}

/// Runs whichever bootstrap `plan.scheme` names.
pub fn run_bootstrap(
    data: &Dataset,
    spec: &ModelSpec,
    plan: &ResamplePlan,
) -> Result<ResampleDistribution> {
    match plan.scheme {
        Scheme::Pairs => bootstrap_pairs(data, spec, plan),
        Scheme::Residual => bootstrap_residual(data, spec, plan),
        Scheme::Wild | Scheme::WildCluster => bootstrap_wild(data, spec, plan),
        Scheme::RandomizationInference => Err(Error::InvalidArgument(
            "randomization inference does not produce a bootstrap distribution".into(),
        )),
    }
}

fn expect_scheme(plan: &ResamplePlan, allowed: &[Scheme]) -> Result<()> {
    plan.validate()?;
    if !allowed.contains(&plan.scheme) {
        return Err(Error::InvalidArgument(format!(
            "plan scheme {:?} does not match this bootstrap",
            plan.scheme
        )));
    }
    Ok(())
}

fn check_cluster_len(map: Option<&ClusterMap>, n: usize) -> Result<()> {
    match map {
        Some(m) if m.len() != n => Err(Error::DimensionMismatch {
            what: format!("cluster labels '{}'", m.dimension()),
            expected: n,
            found: m.len(),
        }),
        _ => Ok(()),
    }
}

type RepOut = (DVector<f64>, Option<Vec<f64>>);

fn assemble(
    fit: &FitResult,
    plan: &ResamplePlan,
    truth: DVector<f64>,
    reps: Vec<RepOut>,
    redraws: usize,
) -> ResampleDistribution {
    let k = fit.k();
    let r = reps.len();
    let mut draws = DMatrix::zeros(r, k);
    let mut ses = plan.se_kind.map(|_| DMatrix::zeros(r, k));
    for (i, (beta, se)) in reps.into_iter().enumerate() {
        draws.row_mut(i).copy_from(&beta.transpose());
        if let (Some(m), Some(se)) = (ses.as_mut(), se) {
            for (j, v) in se.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
    }
    ResampleDistribution {
        names: fit.names().to_vec(),
        draws,
        ses,
        scheme: plan.scheme,
        seed: plan.seed,
        original_beta: fit.beta().clone(),
        truth,
        se_kind: plan.se_kind,
        null: plan.null,
        redraws,
        warnings: plan.warnings(),
    }
}

fn is_degenerate(err: &Error) -> bool {
    matches!(
        err,
        Error::RankDeficient { .. } | Error::TooFewRows { .. } | Error::LeverageInfeasible { .. }
    )
}

/// Pairs (case) bootstrap: each replication draws `n` rows with replacement,
/// or `C` whole clusters with replacement when the plan has a cluster map,
/// and refits. Rank-deficient draws are redrawn; more than `100 r` redraws
/// in total is an error.
pub fn bootstrap_pairs(
    data: &Dataset,
    spec: &ModelSpec,
    plan: &ResamplePlan,
) -> Result<ResampleDistribution> {
    expect_scheme(plan, &[Scheme::Pairs])?;
    if plan.null.is_some() {
        return Err(Error::InvalidArgument(
            "null imposition applies to residual and wild bootstraps, not pairs".into(),
        ));
    }
    let fit = fit_ols(data, spec)?;
    let n = fit.n();
    check_cluster_len(plan.cluster_map.as_ref(), n)?;
    let members = plan.cluster_map.as_ref().map(ClusterMap::members);
    let x = fit.x();
    let y = fit.y();
    let names = fit.names().to_vec();
    let budget = 100 * plan.replications;
    let redraws = AtomicUsize::new(0);

    let reps = run_indexed(plan.replications, plan.seed, plan.workers, |_, rng| loop {
        let (rows, labels) = pairs_draw(rng, n, members.as_deref());
        match refit_rows(x, y, &names, &rows, &labels, plan.se_kind) {
            Ok(out) => return Ok(out),
            Err(e) if is_degenerate(&e) => {
                if redraws.fetch_add(1, Ordering::Relaxed) + 1 > budget {
                    return Err(Error::DegenerateResample { redraws: budget });
                }
            }
            Err(e) => return Err(e),
        }
    })?;
    let truth = fit.beta().clone();
    Ok(assemble(&fit, plan, truth, reps, redraws.into_inner()))
}

/// Row indices of one pairs draw and, for cluster draws (`members` lists each
/// cluster's rows), the replication's cluster labels: one label per drawn
/// cluster, so repeats stay distinct.
pub fn pairs_draw<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    members: Option<&[Vec<usize>]>,
) -> (Vec<usize>, Option<Vec<usize>>) {
    match members {
        None => ((0..n).map(|_| rng.random_range(0..n)).collect(), None),
        Some(groups) => {
            let c = groups.len();
            let mut rows = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for draw in 0..c {
                let g = &groups[rng.random_range(0..c)];
                rows.extend_from_slice(g);
                labels.extend(std::iter::repeat_n(draw, g.len()));
            }
            (rows, Some(labels))
        }
    }
}

fn refit_rows(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    rows: &[usize],
    labels: &Option<Vec<usize>>,
    se_kind: Option<VcovKind>,
) -> Result<RepOut> {
    let design = Arc::new(Design::new(x.select_rows(rows), names.to_vec())?);
    let yb = DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[r]));
    let fit = design.fit(yb)?;
    let se = match se_kind {
        None => None,
        Some(kind) => {
            let map = labels
                .as_ref()
                .map(|l| ClusterMap::from_labels("bootstrap_cluster", l.iter().copied()));
            let maps: Vec<&ClusterMap> = map.iter().collect();
            Some(compute_vcov(&fit, kind, &maps)?.standard_errors())
        }
    };
    Ok((fit.beta().clone(), se))
}

/// Fitted values and residuals that drive a fixed-design bootstrap: the
/// unrestricted fit, or the fit under the plan's null restriction.
fn dgp(fit: &FitResult, plan: &ResamplePlan) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    match plan.null {
        Some(null) => {
            let r = restricted_fit(fit, null.coef, null.value)?;
            Ok((r.beta, r.fitted, r.residuals))
        }
        None => Ok((fit.beta().clone(), fit.fitted(), fit.residuals().clone())),
    }
}

fn fixed_design_bootstrap<F>(
    fit: &FitResult,
    plan: &ResamplePlan,
    truth: DVector<f64>,
    fitted: &DVector<f64>,
    draw_errors: F,
) -> Result<ResampleDistribution>
where
    F: Fn(&mut ChaCha8Rng) -> DVector<f64> + Sync + Send,
{
    let design = Arc::clone(fit.design());
    let maps: Vec<&ClusterMap> = plan.cluster_map.iter().collect();
    let reps = run_indexed(plan.replications, plan.seed, plan.workers, |_, rng| {
        let y_star = fitted + draw_errors(rng);
        let f = design.fit(y_star)?;
        let se = match plan.se_kind {
            Some(kind) => Some(compute_vcov(&f, kind, &maps)?.standard_errors()),
            None => None,
        };
        Ok((f.beta().clone(), se))
    })?;
    Ok(assemble(fit, plan, truth, reps, 0))
}

/// Residual bootstrap: regressors fixed, `y* = X b + e*` with `e*` drawn with
/// replacement from the centred residuals (of the restricted fit when a null
/// is imposed).
pub fn bootstrap_residual(
    data: &Dataset,
    spec: &ModelSpec,
    plan: &ResamplePlan,
) -> Result<ResampleDistribution> {
    expect_scheme(plan, &[Scheme::Residual])?;
    let fit = fit_ols(data, spec)?;
    check_cluster_len(plan.cluster_map.as_ref(), fit.n())?;
    let (truth, fitted, residuals) = dgp(&fit, plan)?;
    let n = residuals.len();
    let centred = residuals.add_scalar(-residuals.mean());
    fixed_design_bootstrap(&fit, plan, truth, &fitted, |rng| {
        DVector::from_fn(n, |_, _| centred[rng.random_range(0..n)])
    })
}

/// Wild bootstrap: regressors fixed, `y*_i = x_i'b + e_i v`, with `v` drawn
/// per observation (`Wild`) or once per cluster (`WildCluster`) from the
/// plan's weight law.
pub fn bootstrap_wild(
    data: &Dataset,
    spec: &ModelSpec,
    plan: &ResamplePlan,
) -> Result<ResampleDistribution> {
    expect_scheme(plan, &[Scheme::Wild, Scheme::WildCluster])?;
    let fit = fit_ols(data, spec)?;
    check_cluster_len(plan.cluster_map.as_ref(), fit.n())?;
    let (truth, fitted, residuals) = dgp(&fit, plan)?;
    let law = plan.weight_law;
    let map = match plan.scheme {
        Scheme::WildCluster => Some(plan.cluster_map.clone().ok_or_else(|| {
            Error::InvalidArgument("wild-cluster bootstrap needs a cluster map".into())
        })?),
        _ => None,
    };
    let n = residuals.len();
    fixed_design_bootstrap(&fit, plan, truth, &fitted, |rng| {
        let v = wild_multipliers(law, map.as_ref(), n, rng);
        residuals.component_mul(&DVector::from_vec(v))
    })
}

/// Per-observation wild multipliers for one replication: `n` independent
/// draws, or one draw per cluster (in cluster-index order) broadcast to the
/// cluster's rows.
pub fn wild_multipliers<R: Rng + ?Sized>(
    law: WeightLaw,
    clusters: Option<&ClusterMap>,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    match clusters {
        Some(map) => {
            let v: Vec<f64> = (0..map.n_clusters()).map(|_| law.draw(rng)).collect();
            map.labels().iter().map(|&c| v[c]).collect()
        }
        None => (0..n).map(|_| law.draw(rng)).collect(),
    }
}

/// Bootstrap standard error: `sqrt(sum (b_i - mean)^2 / (r - 1))`.
pub fn bootstrap_se(dist: &ResampleDistribution, coef: usize) -> Result<f64> {
    let r = dist.replications();
    if r < 2 {
        return Err(Error::TooFewReplications {
            replications: r,
            needed: 2,
        });
    }
    check_coef(dist, coef)?;
    let col = dist.draws.column(coef);
    let mean = col.mean();
    let ss: f64 = col.iter().map(|b| (b - mean) * (b - mean)).sum();
    Ok((ss / (r - 1) as f64).sqrt())
}

fn check_coef(dist: &ResampleDistribution, coef: usize) -> Result<()> {
    if coef >= dist.draws.ncols() {
        return Err(Error::InvalidArgument(format!(
            "coefficient {coef} out of range (k = {})",
            dist.draws.ncols()
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// 1-based order-statistic ranks of a two-sided percentile interval:
/// `ceil(r alpha / 2)` and `ceil(r (1 - alpha / 2))`.
pub fn percentile_indices(replications: usize, alpha: f64) -> Result<(usize, usize)> {
    check_alpha(alpha)?;
    let r = replications as f64;
    let lo = (r * alpha / 2.0 - INDEX_EPS).ceil();
    let hi = (r * (1.0 - alpha / 2.0) - INDEX_EPS).ceil();
    if r * alpha / 2.0 < 1.0 - INDEX_EPS {
        return Err(Error::TooFewReplications {
            replications,
            needed: (2.0 / alpha - INDEX_EPS).ceil() as usize,
        });
    }
    Ok((lo as usize, (hi as usize).min(replications)))
}

/// 1-based rank of the symmetric bootstrap-t critical value among the
/// sorted |t_i|: `ceil(r (1 - alpha))`.
pub fn t_critical_index(replications: usize, alpha: f64) -> Result<usize> {
    check_alpha(alpha)?;
    let idx = (replications as f64 * (1.0 - alpha) - INDEX_EPS).ceil() as usize;
    Ok(idx.clamp(1, replications.max(1)))
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Percentile interval from the ordered replication estimates.
pub fn percentile_ci(dist: &ResampleDistribution, coef: usize, alpha: f64) -> Result<(f64, f64)> {
    check_coef(dist, coef)?;
    let (lo, hi) = percentile_indices(dist.replications(), alpha)?;
    let s = sorted(dist.column(coef));
    Ok((s[lo - 1], s[hi - 1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapT {
    pub coef: String,
    pub critical_index: usize,
    #[serde(with = "crate::float_serde")]
    pub critical_value: f64,
    #[serde(with = "crate::float_serde")]
    pub t_observed: f64,
    pub p_value: f64,
    #[serde(with = "crate::float_serde")]
    pub ci_low: f64,
    #[serde(with = "crate::float_serde")]
    pub ci_high: f64,
    pub centering: TCentering,
}

/// Symmetric percentile-t inference for one coefficient.
///
/// Replication statistics are `t_i = (b_i - c) / se_i` with `c` the
/// bootstrap mean or the DGP coefficient. The critical value is the
/// `ceil(r (1 - alpha))`-th smallest |t_i|; the interval is the original
/// estimate plus or minus that value times the original standard error; the
/// p-value is the share of |t_i| at least as large as the observed |t|
/// (tested against the imposed null value, or zero).
pub fn bootstrap_t(
    dist: &ResampleDistribution,
    fit: &FitResult,
    vcov: &VcovEstimate,
    coef: usize,
    alpha: f64,
    centering: TCentering,
) -> Result<BootstrapT> {
    check_coef(dist, coef)?;
    let r = dist.replications();
    if r < crate::mht::MIN_REPLICATES {
        return Err(Error::TooFewReplications {
            replications: r,
            needed: crate::mht::MIN_REPLICATES,
        });
    }
    let ses = dist.ses.as_ref().ok_or(Error::MissingPerReplicationSe)?;
    if dist.se_kind != Some(vcov.kind()) {
        return Err(Error::InvalidArgument(format!(
            "replication SEs use {:?} but the original estimate uses {:?}",
            dist.se_kind,
            vcov.kind()
        )));
    }
    if vcov.k() != dist.draws.ncols() || fit.k() != dist.draws.ncols() {
        return Err(Error::ShapeMismatch("fit, vcov and distribution disagree on k".into()));
    }
    let center = match centering {
        TCentering::BootstrapMean => dist.mean(coef),
        TCentering::Truth => dist.truth[coef],
    };
    let abs_t: Vec<f64> = (0..r)
        .map(|i| studentized(dist.draws[(i, coef)] - center, ses[(i, coef)]).abs())
        .collect();
    let idx = t_critical_index(r, alpha)?;
    let critical_value = sorted(abs_t.clone())[idx - 1];

    let estimate = fit.beta()[coef];
    let se = vcov.standard_errors()[coef];
    let null_value = match dist.null {
        Some(n) if n.coef == coef => n.value,
        _ => 0.0,
    };
    let t_observed = studentized(estimate - null_value, se);
    let exceed = abs_t.iter().filter(|&&t| t >= t_observed.abs()).count();
    Ok(BootstrapT {
        coef: dist.names[coef].clone(),
        critical_index: idx,
        critical_value,
        t_observed,
        p_value: exceed as f64 / r as f64,
        ci_low: estimate - critical_value * se,
        ci_high: estimate + critical_value * se,
        centering,
    })
}

fn studentized(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}
