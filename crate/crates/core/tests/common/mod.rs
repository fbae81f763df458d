#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use robinf_core::{ClusterMap, Dataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random dataset with `p` normal covariates and heteroskedastic errors.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset {
    let cols: Vec<(String, Vec<f64>)> = (0..p)
        .map(|j| (format!("x{j}"), (0..n).map(|_| normal(rng)).collect()))
        .collect();
    let y = (0..n)
        .map(|i| {
            let signal: f64 = cols.iter().map(|(_, c)| 0.5 * c[i]).sum();
            let scale = 0.5 + cols.first().map_or(0.0, |(_, c)| c[i].abs());
            1.0 + signal + scale * normal(rng)
        })
        .collect();
    Dataset::new("y", y, cols).unwrap()
}

pub fn with_intercept(data: &Dataset) -> DMatrix<f64> {
    let n = data.n_rows();
    let p = data.covariates().ncols();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { data.covariates()[(i, j - 1)] })
}

/// (X'X)^-1 through an LU factorisation of the normal equations.
pub fn xtx_inverse(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x.transpose() * x).lu().try_inverse().expect("invertible normal equations")
}

pub fn normal_equations_beta(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let y = DVector::from_column_slice(y);
    (x.transpose() * x).lu().solve(&(x.transpose() * y)).unwrap()
}

pub fn hat_diagonal(x: &DMatrix<f64>) -> Vec<f64> {
    let h = x * xtx_inverse(x) * x.transpose();
    (0..x.nrows()).map(|i| h[(i, i)]).collect()
}

/// Sandwich with per-observation weights on e_i^2, built row by row.
pub fn loop_sandwich(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let k = x.ncols();
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..x.nrows() {
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += w[i] * x[(i, a)] * x[(i, b)];
            }
        }
    }
    let bread = xtx_inverse(x);
    &bread * meat * &bread
}

/// Liang-Zeger sandwich from explicit per-cluster score sums.
pub fn loop_cluster(x: &DMatrix<f64>, e: &[f64], labels: &[usize], adjust: f64) -> DMatrix<f64> {
    let k = x.ncols();
    let g = labels.iter().max().map_or(0, |m| m + 1);
    let mut scores = vec![vec![0.0; k]; g];
    for i in 0..x.nrows() {
        for a in 0..k {
            scores[labels[i]][a] += x[(i, a)] * e[i];
        }
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in &scores {
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    let bread = xtx_inverse(x);
    &bread * meat * &bread * adjust
}

pub fn residuals(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let beta = normal_equations_beta(x, y);
    let fitted = x * beta;
    y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Welch-Satterthwaite dof for a difference in means.
pub fn welch_dof(a: &[f64], b: &[f64]) -> f64 {
    let (_, va) = mean_var(a);
    let (_, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0))
}

/// Two-sample dataset: treatment dummy `d` with `n0` controls then `n1` treated.
pub fn two_sample(rng: &mut ChaCha8Rng, n0: usize, n1: usize, s0: f64, s1: f64, effect: f64) -> Dataset {
    let mut y = Vec::with_capacity(n0 + n1);
    let mut d = Vec::with_capacity(n0 + n1);
    for _ in 0..n0 {
        y.push(s0 * normal(rng));
        d.push(0.0);
    }
    for _ in 0..n1 {
        y.push(effect + s1 * normal(rng));
        d.push(1.0);
    }
    Dataset::new("y", y, vec![("d".into(), d)]).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, g: usize) -> ClusterMap {
    ClusterMap::from_labels("g", (0..n).map(|i| if i < g { i } else { rng.random_range(0..g) }))
}
