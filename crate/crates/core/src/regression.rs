//! Least-squares fitting through a thin QR factorisation.
//!
//! A [`Design`] owns everything that depends only on the regressors: the QR
//! factors, the bread `(X'X)^{-1}` and the leverages `h_ii`. Fitting an
//! outcome against a design is then O(nk), which the residual and wild
//! bootstraps rely on since their design never changes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, ModelSpec};
use crate::error::{Error, Result};

/// Leverage at or above this value is treated as exactly one.
pub const LEVERAGE_ONE_TOL: f64 = 1e-10;

/// Relative size of a QR pivot below which a column counts as dependent.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Design {
    x: DMatrix<f64>,
    names: Vec<String>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    bread: DMatrix<f64>,
    leverage: Vec<f64>,
}

impl Design {
    /// Factorises `x`. Fails when `n <= k` or when any column is (numerically)
    /// a linear combination of the columns before it.
    pub fn new(x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let (n, k) = x.shape();
        if names.len() != k {
            return Err(Error::DimensionMismatch {
                what: "column names".into(),
                expected: k,
                found: names.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("design has no columns".into()));
        }
        if n <= k {
            return Err(Error::TooFewRows { n, k });
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let q = qr.q();

        let dependent: Vec<String> = (0..k)
            .filter(|&j| {
                let norm = x.column(j).norm();
                norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm
            })
            .map(|j| names[j].clone())
            .collect();
        if !dependent.is_empty() {
            return Err(Error::RankDeficient { columns: dependent });
        }

        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or_else(|| Error::RankDeficient {
                columns: names.clone(),
            })?;
        let mut bread = &r_inv * r_inv.transpose();
        symmetrize(&mut bread);

        let leverage = q
            .row_iter()
            .map(|row| row.norm_squared().clamp(0.0, 1.0))
            .collect();

        Ok(Design {
            x,
            names,
            q,
            r,
            bread,
            leverage,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Thin orthonormal factor (n x k).
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `(X'X)^{-1}`.
    pub fn bread(&self) -> &DMatrix<f64> {
        &self.bread
    }

    pub fn leverage(&self) -> &[f64] {
        &self.leverage
    }

    /// Least-squares coefficients for `y` (R b = Q'y).
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.tr_mul(y);
        self.r
            .solve_upper_triangular(&qty)
            .expect("R is nonsingular once the design is accepted")
    }

    /// Fits `y` against this design.
    pub fn fit(self: &Arc<Self>, y: DVector<f64>) -> Result<FitResult> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "outcome".into(),
                expected: self.n(),
                found: y.len(),
            });
        }
        let beta = self.solve(&y);
        let residuals = &y - &self.x * &beta;
        let n = self.n() as f64;
        let k = self.k() as f64;
        let sigma2_hat = residuals.norm_squared() / (n - k);
        Ok(FitResult {
            design: Arc::clone(self),
            y,
            beta,
            residuals,
            sigma2_hat,
        })
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Result of an OLS fit. Immutable; the design is shared.
#[derive(Debug, Clone)]
pub struct FitResult {
    design: Arc<Design>,
    y: DVector<f64>,
    beta: DVector<f64>,
    residuals: DVector<f64>,
    sigma2_hat: f64,
}

impl FitResult {
    pub fn design(&self) -> &Arc<Design> {
        &self.design
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn residuals(&self) -> &DVector<f64> {
        &self.residuals
    }

    pub fn fitted(&self) -> DVector<f64> {
        &self.y - &self.residuals
    }

    pub fn leverage(&self) -> &[f64] {
        self.design.leverage()
    }

    pub fn bread(&self) -> &DMatrix<f64> {
        self.design.bread()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        self.design.x()
    }

    pub fn names(&self) -> &[String] {
        self.design.names()
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn k(&self) -> usize {
        self.design.k()
    }

    /// Residual variance with the `N - k` divisor.
    pub fn sigma2_hat(&self) -> f64 {
        self.sigma2_hat
    }

    pub fn coef_index(&self, name: &str) -> Result<usize> {
        self.names()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }
}

/// Fits `outcome ~ design(spec)` by least squares.
pub fn fit_ols(data: &Dataset, spec: &ModelSpec) -> Result<FitResult> {
    let (x, names) = data.design_matrix(spec)?;
    let design = Arc::new(Design::new(x, names)?);
    design.fit(DVector::from_column_slice(data.outcome()))
}

/// Leverages with the rows where HC2/HC3 adjustments break down.
#[derive(Debug, Clone, PartialEq)]
pub struct LeverageReport {
    pub values: Vec<f64>,
    /// Rows with `h_ii >= 1 - 1e-10`.
    pub infeasible: Vec<usize>,
}

impl LeverageReport {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

pub fn leverage(fit: &FitResult) -> LeverageReport {
    let values = fit.leverage().to_vec();
    let infeasible = infeasible_rows(&values);
    LeverageReport { values, infeasible }
}

pub(crate) fn infeasible_rows(h: &[f64]) -> Vec<usize> {
    h.iter()
        .enumerate()
        .filter(|(_, &h)| h >= 1.0 - LEVERAGE_ONE_TOL)
        .map(|(i, _)| i)
        .collect()
}

/// Fit under the linear restriction `beta[coef] = value`.
///
/// The restricted coefficient vector has `value` at `coef` and the OLS
/// solution of `y - value * x_coef` on the remaining columns elsewhere.
#[derive(Debug, Clone)]
pub struct RestrictedFit {
    pub beta: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
}

pub fn restricted_fit(fit: &FitResult, coef: usize, value: f64) -> Result<RestrictedFit> {
    let x = fit.x();
    let k = fit.k();
    if coef >= k {
        return Err(Error::InvalidArgument(format!(
            "restricted coefficient {coef} out of range (k = {k})"
        )));
    }
    let y = fit.y();
    let offset = x.column(coef) * value;
    let mut beta = DVector::zeros(k);
    beta[coef] = value;
    let fitted = if k == 1 {
        offset
    } else {
        let keep: Vec<usize> = (0..k).filter(|&j| j != coef).collect();
        let x_rest = x.select_columns(&keep);
        let names = keep.iter().map(|&j| fit.names()[j].clone()).collect();
        let rest = Arc::new(Design::new(x_rest, names)?);
        let gamma = rest.solve(&(y - &offset));
        for (slot, &j) in keep.iter().enumerate() {
            beta[j] = gamma[slot];
        }
        x * &beta
    };
    let residuals = y - &fitted;
    Ok(RestrictedFit {
        beta,
        fitted,
        residuals,
    })
}
