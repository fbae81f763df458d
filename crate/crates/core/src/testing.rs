//! Coefficient t-tests and confidence intervals under Student-t references.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::regression::FitResult;
use crate::vcov::{ClusterCount, VcovEstimate, VcovKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Greater,
    Less,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefTest {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    #[serde(with = "crate::float_serde")]
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
    #[serde(with = "crate::float_serde")]
    pub ci_low: f64,
    #[serde(with = "crate::float_serde")]
    pub ci_high: f64,
    /// Whether the point null `beta = 0` is rejected, i.e. zero lies
    /// outside the confidence interval.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub vcov: VcovKind,
    pub reference: String,
    pub alpha: f64,
    pub alternative: Alternative,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_leverage: f64,
    pub cluster_counts: Vec<ClusterCount>,
    /// Effective cluster count per coefficient, when computed.
    pub effective_clusters: Option<Vec<f64>>,
    pub infeasible_rows: Vec<usize>,
    pub psd_repaired: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub coefficients: Vec<CoefTest>,
    pub provenance: Provenance,
    pub diagnostics: Diagnostics,
}

impl TestReport {
    pub fn coef(&self, name: &str) -> Option<&CoefTest> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

fn student_t(dof: f64) -> Result<StudentsT> {
    StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::InvalidArgument(format!("invalid t reference dof {dof}: {e}")))
}

/// Two-sided t-tests of `beta_j = 0` for every coefficient.
pub fn t_tests(fit: &FitResult, vcov: &VcovEstimate, alpha: f64) -> Result<TestReport> {
    t_tests_with(fit, vcov, alpha, Alternative::TwoSided)
}

pub fn t_tests_with(
    fit: &FitResult,
    vcov: &VcovEstimate,
    alpha: f64,
    alternative: Alternative,
) -> Result<TestReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if vcov.k() != fit.k() {
        return Err(Error::ShapeMismatch(format!(
            "vcov is {0}x{0} but the fit has {1} coefficients",
            vcov.k(),
            fit.k()
        )));
    }
    let ses = vcov.standard_errors();
    let coefficients = (0..fit.k())
        .map(|j| {
            let name = fit.names()[j].clone();
            let estimate = fit.beta()[j];
            let se = ses[j];
            let dof = vcov.dof()[j];
            let dist = student_t(dof)?;
            if se <= 1e-12 * estimate.abs() || se == 0.0 {
                if estimate != 0.0 {
                    return Err(Error::ZeroSe { coefficient: name });
                }
                return Ok(CoefTest {
                    name,
                    estimate,
                    se,
                    statistic: 0.0,
                    dof,
                    p_value: 1.0,
                    ci_low: 0.0,
                    ci_high: 0.0,
                    rejected: false,
                });
            }
            let statistic = estimate / se;
            let (p_value, ci_low, ci_high) = match alternative {
                Alternative::TwoSided => {
                    let crit = dist.inverse_cdf(1.0 - alpha / 2.0);
                    let p = (2.0 * dist.sf(statistic.abs())).min(1.0);
                    (p, estimate - crit * se, estimate + crit * se)
                }
                Alternative::Greater => {
                    let crit = dist.inverse_cdf(1.0 - alpha);
                    (dist.sf(statistic), estimate - crit * se, f64::INFINITY)
                }
                Alternative::Less => {
                    let crit = dist.inverse_cdf(1.0 - alpha);
                    (dist.cdf(statistic), f64::NEG_INFINITY, estimate + crit * se)
                }
            };
            Ok(CoefTest {
                name,
                estimate,
                se,
                statistic,
                dof,
                p_value: p_value.clamp(0.0, 1.0),
                ci_low,
                ci_high,
                rejected: ci_low > 0.0 || ci_high < 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let reference = {
        let dofs = vcov.dof();
        if dofs.windows(2).all(|w| w[0] == w[1]) {
            format!("student_t({})", dofs[0])
        } else {
            "student_t(per-coefficient dof)".to_string()
        }
    };
    let mut notes = vcov.notes().to_vec();
    if vcov.kind() == VcovKind::MaxSe {
        notes.push("max-SE hybrid: off-diagonal entries are taken from the robust matrix".into());
    }
    Ok(TestReport {
        coefficients,
        provenance: Provenance {
            vcov: vcov.kind(),
            reference,
            alpha,
            alternative,
        },
        diagnostics: Diagnostics {
            max_leverage: fit.leverage().iter().copied().fold(0.0, f64::max),
            cluster_counts: vcov.cluster_counts().to_vec(),
            effective_clusters: None,
            infeasible_rows: vcov.infeasible_obs().to_vec(),
            psd_repaired: vcov.psd_repaired(),
            notes,
        },
    })
}

/// Per-coefficient larger of the conventional and robust variances.
///
/// The diagonal is the elementwise max; off-diagonal entries (and the
/// reference dof) come from the robust estimate.
pub fn max_se_heuristic(conv: &VcovEstimate, robust: &VcovEstimate) -> Result<VcovEstimate> {
    if conv.k() != robust.k() {
        return Err(Error::ShapeMismatch(format!(
            "conventional is {}x{}, robust is {}x{}",
            conv.k(),
            conv.k(),
            robust.k(),
            robust.k()
        )));
    }
    let mut matrix = robust.matrix().clone();
    for j in 0..matrix.nrows() {
        matrix[(j, j)] = conv.matrix()[(j, j)].max(robust.matrix()[(j, j)]);
    }
    Ok(VcovEstimate::new(matrix, VcovKind::MaxSe, robust.dof().to_vec())
        .with_clusters(robust.cluster_counts().to_vec())
        .with_note(format!(
            "max of {} and {} variances",
            conv.kind().as_str(),
            robust.kind().as_str()
        )))
}
