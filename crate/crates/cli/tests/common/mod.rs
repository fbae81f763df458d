#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Writes a CSV with the given header and numeric-or-text rows.
pub fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> PathBuf {
    let path = dir.join(name);
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    std::fs::write(&path, text).unwrap();
    path
}

pub fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("analysis.toml");
    std::fs::write(&path, body).unwrap();
    path
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn robinf(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_robinf")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Welch two-sample test of `mean(b) - mean(a)`: (difference, se, dof).
pub fn welch(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let dof = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    (mb - ma, (sa + sb).sqrt(), dof)
}

/// Two-sample CSV (`y`, `d`) with `n0` controls then `n1` treated.
pub fn two_sample_rows(rng: &mut ChaCha8Rng, n0: usize, n1: usize, s0: f64, s1: f64, effect: f64) -> (Vec<f64>, Vec<f64>) {
    let a = (0..n0).map(|_| s0 * normal(rng)).collect();
    let b = (0..n1).map(|_| effect + s1 * normal(rng)).collect();
    (a, b)
}

pub fn two_sample_csv(dir: &Path, a: &[f64], b: &[f64]) -> PathBuf {
    let rows: Vec<Vec<String>> = a
        .iter()
        .map(|y| vec![y.to_string(), "0".into()])
        .chain(b.iter().map(|y| vec![y.to_string(), "1".into()]))
        .collect();
    write_csv(dir, "two_sample.csv", &["y", "d"], &rows)
}
