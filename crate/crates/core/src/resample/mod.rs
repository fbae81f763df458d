//! Seeded, parallel resampling: pairs, residual and wild bootstraps and
//! randomization inference.
//!
//! Replication `i` draws all of its randomness from its own ChaCha8 stream,
//! keyed by `(seed, i)`. Replications run on a rayon pool and are assembled
//! in index order, so results are bit-identical for any worker count.

mod bootstrap;
mod ri;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClusterMap;
use crate::error::{Error, Result};
use crate::vcov::VcovKind;

pub use bootstrap::{
    bootstrap_pairs, bootstrap_residual, bootstrap_se, bootstrap_t, bootstrap_wild,
    pairs_draw, percentile_ci, percentile_indices, run_bootstrap, t_critical_index, wild_multipliers, BootstrapT,
    TCentering,
};
pub use ri::{randomization_inference, AssignmentScheme, RiResult};

/// Replications below which bootstrap standard errors get a warning.
pub const MIN_REPS_SE: usize = 5_000;
/// Replications below which pivotal statistics and intervals get a warning.
pub const MIN_REPS_PIVOTAL: usize = 10_000;
/// Largest assignment count that randomization inference enumerates exactly.
pub const DEFAULT_EXHAUSTIVE_THRESHOLD: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Pairs,
    Residual,
    Wild,
    WildCluster,
    RandomizationInference,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "pairs" | "classic" => Scheme::Pairs,
            "residual" => Scheme::Residual,
            "wild" => Scheme::Wild,
            "wild-cluster" | "wild_cluster" | "wildcluster" => Scheme::WildCluster,
            "ri" | "randomization" => Scheme::RandomizationInference,
            other => {
                return Err(Error::InvalidArgument(format!("unknown resampling scheme '{other}'")))
            }
        })
    }
}

/// Mean-zero, unit-variance multiplier laws for the wild bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    /// +1 or -1 with probability 1/2 each.
    #[default]
    Rademacher,
    /// Two-point law with golden-ratio support.
    Mammen,
    /// Six points `+-sqrt(3/2), +-1, +-sqrt(1/2)`, each with probability 1/6.
    Webb,
}

impl std::str::FromStr for WeightLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rademacher" => Ok(WeightLaw::Rademacher),
            "mammen" => Ok(WeightLaw::Mammen),
            "webb" => Ok(WeightLaw::Webb),
            other => Err(Error::WeightLawUnavailable(other.to_string())),
        }
    }
}

impl WeightLaw {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            WeightLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            WeightLaw::Mammen => {
                let s5 = 5f64.sqrt();
                let p_low = (s5 + 1.0) / (2.0 * s5);
                if rng.random::<f64>() < p_low {
                    -(s5 - 1.0) / 2.0
                } else {
                    (s5 + 1.0) / 2.0
                }
            }
            WeightLaw::Webb => {
                const POINTS: [f64; 3] = [1.224_744_871_391_589, 1.0, std::f64::consts::FRAC_1_SQRT_2];
                let k = rng.random_range(0..6usize);
                let v = POINTS[k % 3];
                if k < 3 {
                    -v
                } else {
                    v
                }
            }
        }
    }
}

/// Restriction `beta[coef] = value` imposed on the bootstrap DGP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullRestriction {
    pub coef: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResamplePlan {
    pub scheme: Scheme,
    pub replications: usize,
    pub seed: u64,
    /// Resample (pairs) or draw weights (wild-cluster) or assign treatment
    /// (RI) at this cluster level.
    pub cluster_map: Option<ClusterMap>,
    pub weight_law: WeightLaw,
    pub null: Option<NullRestriction>,
    pub exhaustive_threshold: u64,
    pub assignment: AssignmentScheme,
    /// Variance estimator recomputed in each replication (for bootstrap-t).
    pub se_kind: Option<VcovKind>,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl ResamplePlan {
    pub fn new(scheme: Scheme, replications: usize, seed: u64) -> Self {
        ResamplePlan {
            scheme,
            replications,
            seed,
            cluster_map: None,
            weight_law: WeightLaw::default(),
            null: None,
            exhaustive_threshold: DEFAULT_EXHAUSTIVE_THRESHOLD,
            assignment: AssignmentScheme::Complete,
            se_kind: None,
            workers: None,
        }
    }

    pub fn with_clusters(mut self, map: ClusterMap) -> Self {
        self.cluster_map = Some(map);
        self
    }

    pub fn with_weight_law(mut self, law: WeightLaw) -> Self {
        self.weight_law = law;
        self
    }

    pub fn with_null(mut self, coef: usize, value: f64) -> Self {
        self.null = Some(NullRestriction { coef, value });
        self
    }

    pub fn with_se(mut self, kind: VcovKind) -> Self {
        self.se_kind = Some(kind);
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    pub fn with_assignment(mut self, assignment: AssignmentScheme) -> Self {
        self.assignment = assignment;
        self
    }

    pub fn with_exhaustive_threshold(mut self, threshold: u64) -> Self {
        self.exhaustive_threshold = threshold;
        self
    }

    /// Low-replication warnings. Bootstrap SEs want at least 5,000
    /// replications; pivotal statistics (per-replication SEs requested) want
    /// at least 10,000.
    pub fn warnings(&self) -> Vec<String> {
        let r = self.replications;
        let mut out = Vec::new();
        if self.scheme == Scheme::RandomizationInference {
            return out;
        }
        if r < MIN_REPS_SE {
            out.push(format!(
                "{r} replications is below the {MIN_REPS_SE} recommended for bootstrap standard errors"
            ));
        }
        if self.se_kind.is_some() && r < MIN_REPS_PIVOTAL {
            out.push(format!(
                "{r} replications is below the {MIN_REPS_PIVOTAL} recommended for pivotal statistics"
            ));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// The random stream owned by replication `index`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `job(i, rng_i)` for every replication and returns the outputs in
/// index order.
pub(crate) fn run_indexed<T, F>(count: usize, seed: u64, workers: Option<usize>, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync + Send,
{
    let body = || {
        (0..count)
            .into_par_iter()
            .map(|i| job(i, &mut substream(seed, i as u64)))
            .collect::<Result<Vec<T>>>()
    };
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?
            .install(body),
        None => body(),
    }
}

/// Coefficient draws (and optionally per-replication standard errors) from
/// one resampling run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResampleDistribution {
    pub(crate) names: Vec<String>,
    pub(crate) draws: DMatrix<f64>,
    pub(crate) ses: Option<DMatrix<f64>>,
    pub(crate) scheme: Scheme,
    pub(crate) seed: u64,
    pub(crate) original_beta: DVector<f64>,
    pub(crate) truth: DVector<f64>,
    pub(crate) se_kind: Option<VcovKind>,
    pub(crate) null: Option<NullRestriction>,
    pub(crate) redraws: usize,
    pub(crate) warnings: Vec<String>,
}

impl ResampleDistribution {
    pub fn replications(&self) -> usize {
        self.draws.nrows()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Replication estimates, r x k.
    pub fn draws(&self) -> &DMatrix<f64> {
        &self.draws
    }

    /// Per-replication standard errors, r x k, when requested.
    pub fn ses(&self) -> Option<&DMatrix<f64>> {
        self.ses.as_ref()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Full-sample estimate, kept as the point estimate.
    pub fn original_beta(&self) -> &DVector<f64> {
        &self.original_beta
    }

    /// Coefficients of the bootstrap data-generating process: the original
    /// estimate, or the restricted estimate when a null was imposed.
    pub fn truth(&self) -> &DVector<f64> {
        &self.truth
    }

    pub fn se_kind(&self) -> Option<VcovKind> {
        self.se_kind
    }

    pub fn null(&self) -> Option<NullRestriction> {
        self.null
    }

    /// Rank-deficient replications that were redrawn.
    pub fn redraws(&self) -> usize {
        self.redraws
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Draws for one coefficient.
    pub fn column(&self, coef: usize) -> Vec<f64> {
        self.draws.column(coef).iter().copied().collect()
    }

    /// Mean of the draws for one coefficient.
    pub fn mean(&self, coef: usize) -> f64 {
        self.draws.column(coef).mean()
    }
}
