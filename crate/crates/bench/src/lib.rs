//! Synthetic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use robinf_core::{ClusterMap, Dataset};

/// `n` rows, `p` normal regressors, heteroskedastic errors with a cluster
/// shock; cluster sizes are uneven.
pub fn synthetic(n: usize, p: usize, clusters: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let shock: Vec<f64> = (0..clusters).map(|_| draw()).collect();
    let cols: Vec<(String, Vec<f64>)> = (0..p).map(|j| (format!("x{j}"), (0..n).map(|_| draw()).collect())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let labels: Vec<usize> = (0..n)
        .map(|i| if i < clusters { i } else { rng.random_range(0..clusters) })
        .collect();
    let y = (0..n)
        .map(|i| {
            let signal: f64 = cols.iter().map(|(_, c)| 0.3 * c[i]).sum();
            let e: f64 = StandardNormal.sample(&mut rng);
            1.0 + signal + shock[labels[i]] + (0.5 + cols[0].1[i].abs()) * e
        })
        .collect();
    Dataset::new("y", y, cols)
        .expect("finite synthetic data")
        .with_clusters(ClusterMap::from_labels("g", labels))
        .expect("matching lengths")
}
