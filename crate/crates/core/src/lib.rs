//! Robust inference for linear regression.
//!
//! - [`regression`]: OLS through a thin QR factorisation, leverage, restricted fits.
//! - [`vcov`]: conventional, HC0-HC3, Bell-McCaffrey, cluster-robust and
//!   multiway variance estimators, plus the effective-cluster diagnostic.
//! - [`testing`]: Student-t tests and intervals under each estimator's dof.
//! - [`mht`]: Bonferroni, Holm, Westfall-Young, Romano-Wolf, Benjamini-Hochberg
//!   and sharpened q-values.
//! - [`resample`]: deterministic parallel pairs/residual/wild bootstraps and
//!   randomization inference.

pub mod data;
pub mod error;
mod float_serde;
pub mod mht;
pub mod regression;
pub mod resample;
pub mod testing;
pub mod vcov;

pub use data::{ClusterMap, Dataset, ModelSpec, INTERCEPT};
pub use error::{Error, ErrorCategory, Result};
pub use mht::{MhtMethod, MhtReport, PValueFamily};
pub use regression::{fit_ols, leverage, Design, FitResult, LeverageReport};
pub use resample::{ResampleDistribution, ResamplePlan, Scheme, WeightLaw};
pub use testing::{t_tests, TestReport};
pub use vcov::{HcVariant, VcovEstimate, VcovKind};
