//! Variance-covariance estimators for OLS coefficients.
//!
//! Every robust estimator here is a sandwich `B M B` with bread
//! `B = (X'X)^{-1}` and a meat `M` built from residual-weighted score
//! contributions:
//!
//! | kind | meat |
//! |------|------|
//! | HC0 | `sum e_i^2 x_i x_i'` |
//! | HC1 | HC0 scaled by `N / (N - k)` |
//! | HC2 | `sum e_i^2 / (1 - h_ii) x_i x_i'` |
//! | HC3 | `sum e_i^2 / (1 - h_ii)^2 x_i x_i'` |
//! | cluster | `a * sum_c (X_c' e_c)(X_c' e_c)'`, `a = C/(C-1) * (N-1)/(N-k)` |
//!
//! Each estimate carries per-coefficient reference degrees of freedom so that
//! downstream t-tests pick the right Student-t automatically.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::ClusterMap;
use crate::error::{Error, Result};
use crate::regression::{infeasible_rows, symmetrize, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcovKind {
    Conventional,
    Hc0,
    Hc1,
    Hc2,
    Hc3,
    /// HC2 matrix with Bell-McCaffrey moment-matched degrees of freedom.
    Hc2Bm,
    ClusterLz,
    Multiway,
    /// Elementwise larger of conventional and robust variances.
    MaxSe,
}

impl VcovKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VcovKind::Conventional => "conventional",
            VcovKind::Hc0 => "hc0",
            VcovKind::Hc1 => "hc1",
            VcovKind::Hc2 => "hc2",
            VcovKind::Hc3 => "hc3",
            VcovKind::Hc2Bm => "hc2_bm",
            VcovKind::ClusterLz => "cluster_lz",
            VcovKind::Multiway => "multiway",
            VcovKind::MaxSe => "max_se",
        }
    }
}

impl std::str::FromStr for VcovKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "conventional" | "ols" | "classical" => VcovKind::Conventional,
            "hc0" => VcovKind::Hc0,
            "hc1" => VcovKind::Hc1,
            "hc2" => VcovKind::Hc2,
            "hc3" => VcovKind::Hc3,
            "bm" | "hc2_bm" | "hc2-bm" => VcovKind::Hc2Bm,
            "cluster" | "cluster_lz" | "lz" => VcovKind::ClusterLz,
            "multiway" | "twoway" => VcovKind::Multiway,
            "max_se" | "maxse" | "max" => VcovKind::MaxSe,
            other => {
                return Err(Error::InvalidArgument(format!("unknown vcov kind '{other}'")))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HcVariant {
    Hc0,
    Hc1,
    Hc2,
    Hc3,
}

impl HcVariant {
    pub fn kind(self) -> VcovKind {
        match self {
            HcVariant::Hc0 => VcovKind::Hc0,
            HcVariant::Hc1 => VcovKind::Hc1,
            HcVariant::Hc2 => VcovKind::Hc2,
            HcVariant::Hc3 => VcovKind::Hc3,
        }
    }
}

/// Cluster count for one clustering dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCount {
    pub dimension: String,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VcovEstimate {
    matrix: DMatrix<f64>,
    kind: VcovKind,
    dof: Vec<f64>,
    cluster_counts: Vec<ClusterCount>,
    infeasible_obs: Vec<usize>,
    psd_repaired: bool,
    notes: Vec<String>,
}

impl VcovEstimate {
    pub(crate) fn new(matrix: DMatrix<f64>, kind: VcovKind, dof: Vec<f64>) -> Self {
        VcovEstimate {
            matrix,
            kind,
            dof,
            cluster_counts: Vec::new(),
            infeasible_obs: Vec::new(),
            psd_repaired: false,
            notes: Vec::new(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> VcovKind {
        self.kind
    }

    /// Reference degrees of freedom, one per coefficient.
    pub fn dof(&self) -> &[f64] {
        &self.dof
    }

    pub fn cluster_counts(&self) -> &[ClusterCount] {
        &self.cluster_counts
    }

    /// Rows whose leverage adjustment was impossible (`h_ii = 1`).
    pub fn infeasible_obs(&self) -> &[usize] {
        &self.infeasible_obs
    }

    /// True when negative eigenvalues were truncated to restore PSD.
    pub fn psd_repaired(&self) -> bool {
        self.psd_repaired
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }

    /// Square roots of the diagonal.
    pub fn standard_errors(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub(crate) fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub(crate) fn with_clusters(mut self, counts: Vec<ClusterCount>) -> Self {
        self.cluster_counts = counts;
        self
    }
}

/// `X' diag(w) X`.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    x.tr_mul(&xw)
}

fn sandwich(bread: &DMatrix<f64>, meat: &DMatrix<f64>) -> DMatrix<f64> {
    let mut v = bread * meat * bread;
    symmetrize(&mut v);
    v
}

fn residual_dof(fit: &FitResult) -> f64 {
    (fit.n() - fit.k()) as f64
}

/// Homoskedastic OLS variance `sigma^2 (X'X)^{-1}` with the `N - k` divisor.
pub fn vcov_conventional(fit: &FitResult) -> VcovEstimate {
    let matrix = fit.bread() * fit.sigma2_hat();
    VcovEstimate::new(matrix, VcovKind::Conventional, vec![residual_dof(fit); fit.k()])
}

/// Per-observation meat weights for an HC variant. Fails for HC2/HC3 when any
/// observation has leverage one.
pub fn hc_weights(fit: &FitResult, variant: HcVariant) -> Result<Vec<f64>> {
    let e = fit.residuals();
    let h = fit.leverage();
    if matches!(variant, HcVariant::Hc2 | HcVariant::Hc3) {
        let bad = infeasible_rows(h);
        if !bad.is_empty() {
            return Err(Error::LeverageInfeasible { rows: bad });
        }
    }
    let n = fit.n() as f64;
    let scale = n / (n - fit.k() as f64);
    Ok(e.iter()
        .zip(h)
        .map(|(&e, &h)| {
            let e2 = e * e;
            match variant {
                HcVariant::Hc0 => e2,
                HcVariant::Hc1 => scale * e2,
                HcVariant::Hc2 => e2 / (1.0 - h),
                HcVariant::Hc3 => e2 / ((1.0 - h) * (1.0 - h)),
            }
        })
        .collect())
}

/// Eicker-Huber-White sandwich with the requested small-sample weighting.
pub fn vcov_hc(fit: &FitResult, variant: HcVariant) -> Result<VcovEstimate> {
    let w = hc_weights(fit, variant)?;
    let meat = weighted_gram(fit.x(), &w);
    Ok(VcovEstimate::new(
        sandwich(fit.bread(), &meat),
        variant.kind(),
        vec![residual_dof(fit); fit.k()],
    ))
}

/// HC2 with Bell-McCaffrey degrees of freedom.
///
/// For coefficient `j`, the HC2 variance is the quadratic form `e' W e` in
/// the OLS residuals, `W = diag(a_i^2 / (1 - h_ii))`, `a = X B e_j`. Since
/// `e = M u` with `M = I - H`, under errors with covariance `D` the form has
/// mean `tr(P D)` and variance `2 tr((P D)^2)`, `P = M W M`. Matching these to
/// a scaled chi-square gives
///
/// ```text
/// dof_j = tr(P D)^2 / tr((P D)^2)
/// ```
///
/// `D` is a working model built from the HC2-adjusted squared residuals
/// `e_i^2 / (1 - h_ii)`, projected onto the column space of `X` (floored at a
/// tiny positive value). For a two-group mean comparison this yields the group
/// sample variances and the formula collapses to Welch-Satterthwaite; for an
/// intercept-only model it gives `n - 1`.
pub fn vcov_bm(fit: &FitResult) -> Result<VcovEstimate> {
    let hc2 = vcov_hc(fit, HcVariant::Hc2)?;
    let dof = bm_dof(fit)?;
    Ok(VcovEstimate {
        kind: VcovKind::Hc2Bm,
        dof,
        ..hc2
    })
}

/// Moment-matched degrees of freedom for each coefficient (see [`vcov_bm`]).
pub fn bm_dof(fit: &FitResult) -> Result<Vec<f64>> {
    let h = fit.leverage();
    let bad = infeasible_rows(h);
    if !bad.is_empty() {
        return Err(Error::LeverageInfeasible { rows: bad });
    }
    let q = fit.design().q();
    let n = fit.n();
    let fallback = residual_dof(fit);

    let adjusted: Vec<f64> = fit
        .residuals()
        .iter()
        .zip(h)
        .map(|(e, h)| e * e / (1.0 - h))
        .collect();
    let mean_adjusted = adjusted.iter().sum::<f64>() / n as f64;
    if mean_adjusted <= 0.0 {
        return Ok(vec![fallback; fit.k()]);
    }
    let adjusted = DVector::from_vec(adjusted);
    let projected = q * q.tr_mul(&adjusted);
    let floor = 1e-10 * mean_adjusted;
    let d: Vec<f64> = projected.iter().map(|v| v.max(floor)).collect();

    let influence = fit.x() * fit.bread();
    (0..fit.k())
        .map(|j| {
            let w: Vec<f64> = (0..n)
                .map(|i| influence[(i, j)].powi(2) / (1.0 - h[i]))
                .collect();
            let (tr1, tr2) = satterthwaite_traces(q, h, &w, &d);
            Ok(if tr2 > 0.0 { tr1 * tr1 / tr2 } else { fallback })
        })
        .collect()
}

/// `(tr(PD), tr((PD)^2))` for `P = M diag(w) M`, `M = I - QQ'`, `D = diag(d)`,
/// computed from n x k products without forming any n x n matrix.
pub(crate) fn satterthwaite_traces(
    q: &DMatrix<f64>,
    h: &[f64],
    w: &[f64],
    d: &[f64],
) -> (f64, f64) {
    let n = q.nrows();
    let c = weighted_gram(q, w);
    let sqrt_d: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let z_weights: Vec<f64> = sqrt_d.iter().zip(w).map(|(s, w)| s * w).collect();
    let mut y = q.clone();
    let mut z = q.clone();
    for i in 0..n {
        y.row_mut(i).scale_mut(sqrt_d[i]);
        z.row_mut(i).scale_mut(z_weights[i]);
    }
    let e: Vec<f64> = d.iter().zip(w).map(|(d, w)| d * w).collect();

    let mut tr1 = 0.0;
    let mut ee = 0.0;
    let mut e_yz = 0.0;
    let mut e_ycy = 0.0;
    for i in 0..n {
        let qi = q.row(i);
        let qcq = (qi * &c).dot(&qi);
        tr1 += d[i] * (w[i] * (1.0 - 2.0 * h[i]) + qcq);
        ee += e[i] * e[i];
        let yi = y.row(i);
        e_yz += e[i] * yi.dot(&z.row(i));
        e_ycy += e[i] * (yi * &c).dot(&yi);
    }
    let yty = y.tr_mul(&y);
    let zty = z.tr_mul(&y);
    let ztz = z.tr_mul(&z);
    let cyy = &c * &yty;

    let tr2 = ee + 2.0 * (&zty * &zty).trace() + (&cyy * &cyy).trace() - 4.0 * e_yz
        + 2.0 * e_ycy
        + 2.0 * (&ztz * &yty).trace()
        - 4.0 * (&zty * &c * &yty).trace();
    (tr1, tr2)
}

/// Small-sample factor for the cluster-robust meat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ClusterAdjustment {
    /// `a = C/(C-1) * (N-1)/(N-k)`.
    #[default]
    Standard,
    /// `a = 1`.
    None,
}

/// Per-cluster score sums `X_c' e_c`, one row per cluster in label order.
pub fn cluster_scores(fit: &FitResult, clusters: &ClusterMap) -> Result<DMatrix<f64>> {
    if clusters.len() != fit.n() {
        return Err(Error::DimensionMismatch {
            what: format!("cluster labels '{}'", clusters.dimension()),
            expected: fit.n(),
            found: clusters.len(),
        });
    }
    let x = fit.x();
    let e = fit.residuals();
    let mut scores = DMatrix::zeros(clusters.n_clusters(), fit.k());
    for (i, &c) in clusters.labels().iter().enumerate() {
        for j in 0..fit.k() {
            scores[(c, j)] += x[(i, j)] * e[i];
        }
    }
    Ok(scores)
}

fn require_clusters(clusters: &ClusterMap) -> Result<()> {
    if clusters.n_clusters() < 2 {
        return Err(Error::SingleCluster {
            dimension: clusters.dimension().to_string(),
            clusters: clusters.n_clusters(),
        });
    }
    Ok(())
}

/// Liang-Zeger cluster-robust variance with the standard small-sample factor.
pub fn vcov_cluster(fit: &FitResult, clusters: &ClusterMap) -> Result<VcovEstimate> {
    vcov_cluster_with(fit, clusters, ClusterAdjustment::Standard)
}

pub fn vcov_cluster_with(
    fit: &FitResult,
    clusters: &ClusterMap,
    adjustment: ClusterAdjustment,
) -> Result<VcovEstimate> {
    require_clusters(clusters)?;
    let scores = cluster_scores(fit, clusters)?;
    let c = clusters.n_clusters() as f64;
    let n = fit.n() as f64;
    let k = fit.k() as f64;
    let a = match adjustment {
        ClusterAdjustment::Standard => c / (c - 1.0) * (n - 1.0) / (n - k),
        ClusterAdjustment::None => 1.0,
    };
    let meat = scores.tr_mul(&scores) * a;
    Ok(VcovEstimate::new(
        sandwich(fit.bread(), &meat),
        VcovKind::ClusterLz,
        vec![c - 1.0; fit.k()],
    )
    .with_clusters(vec![ClusterCount {
        dimension: clusters.dimension().to_string(),
        clusters: clusters.n_clusters(),
    }]))
}

/// Two-way clustering: `V_A + V_B - V_{A x B}`.
///
/// The combination is not guaranteed positive semidefinite; when it has a
/// negative eigenvalue, negative eigenvalues are set to zero, the matrix is
/// reassembled, and the estimate is flagged. Reference dof is
/// `min(C_A, C_B) - 1`.
pub fn vcov_multiway(
    fit: &FitResult,
    dim_a: &ClusterMap,
    dim_b: &ClusterMap,
) -> Result<VcovEstimate> {
    vcov_multiway_with(fit, dim_a, dim_b, ClusterAdjustment::Standard)
}

pub fn vcov_multiway_with(
    fit: &FitResult,
    dim_a: &ClusterMap,
    dim_b: &ClusterMap,
    adjustment: ClusterAdjustment,
) -> Result<VcovEstimate> {
    require_clusters(dim_a)?;
    require_clusters(dim_b)?;
    let both = dim_a.intersect(dim_b)?;
    let va = vcov_cluster_with(fit, dim_a, adjustment)?;
    let vb = vcov_cluster_with(fit, dim_b, adjustment)?;
    let vab = vcov_cluster_with(fit, &both, adjustment)?;
    let mut matrix = va.matrix() + vb.matrix() - vab.matrix();
    symmetrize(&mut matrix);

    let repaired = truncate_negative_eigenvalues(&mut matrix);
    let dof = dim_a.n_clusters().min(dim_b.n_clusters()) as f64 - 1.0;
    let mut est = VcovEstimate::new(matrix, VcovKind::Multiway, vec![dof; fit.k()])
        .with_clusters(vec![
            ClusterCount {
                dimension: dim_a.dimension().to_string(),
                clusters: dim_a.n_clusters(),
            },
            ClusterCount {
                dimension: dim_b.dimension().to_string(),
                clusters: dim_b.n_clusters(),
            },
            ClusterCount {
                dimension: both.dimension().to_string(),
                clusters: both.n_clusters(),
            },
        ])
        .with_note("multiway reference dof is min(C_A, C_B) - 1, a conservative choice");
    if repaired {
        est.psd_repaired = true;
        est = est.with_note("negative eigenvalues of the multiway matrix were set to zero");
    }
    Ok(est)
}

/// Clamps negative eigenvalues to zero in place. Returns whether anything
/// beyond rounding noise was negative.
fn truncate_negative_eigenvalues(matrix: &mut DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(matrix.clone());
    let scale = eig.eigenvalues.amax();
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().all(|&l| l >= -tol) {
        return false;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let mut rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut rebuilt);
    *matrix = rebuilt;
    true
}

/// Dispatches on `kind`. Cluster kinds take their dimensions from
/// `clusters` (one for `ClusterLz`, two for `Multiway`); `MaxSe` combines
/// the conventional matrix with HC1.
pub fn compute_vcov(
    fit: &FitResult,
    kind: VcovKind,
    clusters: &[&ClusterMap],
) -> Result<VcovEstimate> {
    let need = |count: usize| {
        if clusters.len() < count {
            Err(Error::InvalidArgument(format!(
                "{} needs {count} cluster dimension(s), got {}",
                kind.as_str(),
                clusters.len()
            )))
        } else {
            Ok(())
        }
    };
    match kind {
        VcovKind::Conventional => Ok(vcov_conventional(fit)),
        VcovKind::Hc0 => vcov_hc(fit, HcVariant::Hc0),
        VcovKind::Hc1 => vcov_hc(fit, HcVariant::Hc1),
        VcovKind::Hc2 => vcov_hc(fit, HcVariant::Hc2),
        VcovKind::Hc3 => vcov_hc(fit, HcVariant::Hc3),
        VcovKind::Hc2Bm => vcov_bm(fit),
        VcovKind::ClusterLz => {
            need(1)?;
            vcov_cluster(fit, clusters[0])
        }
        VcovKind::Multiway => {
            need(2)?;
            vcov_multiway(fit, clusters[0], clusters[1])
        }
        VcovKind::MaxSe => crate::testing::max_se_heuristic(
            &vcov_conventional(fit),
            &vcov_hc(fit, HcVariant::Hc1)?,
        ),
    }
}

/// Effective number of clusters for one coefficient.
///
/// With `a = X B e_j` the coefficient's per-observation influence weights,
/// each cluster's weight is `g_c = sum_{i in c} a_i^2` (its share of the
/// coefficient variance under homoskedastic independent errors). With
/// `Gamma` the squared coefficient of variation of the `g_c`,
///
/// ```text
/// G* = C / (1 + Gamma)
/// ```
///
/// which is `C` for clusters balanced in size and leverage and shrinks as
/// the weights concentrate in few clusters. Diagnostic only.
pub fn effective_clusters(fit: &FitResult, clusters: &ClusterMap, coef: usize) -> Result<f64> {
    require_clusters(clusters)?;
    if clusters.len() != fit.n() {
        return Err(Error::DimensionMismatch {
            what: format!("cluster labels '{}'", clusters.dimension()),
            expected: fit.n(),
            found: clusters.len(),
        });
    }
    if coef >= fit.k() {
        return Err(Error::InvalidArgument(format!(
            "coefficient index {coef} out of range (k = {})",
            fit.k()
        )));
    }
    let influence = fit.x() * fit.bread().column(coef);
    let mut weights = vec![0.0; clusters.n_clusters()];
    for (i, &c) in clusters.labels().iter().enumerate() {
        weights[c] += influence[i] * influence[i];
    }
    let c = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / c;
    if mean <= 0.0 {
        return Ok(c);
    }
    let cv2 = weights.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / c / (mean * mean);
    Ok(c / (1.0 + cv2))
}
