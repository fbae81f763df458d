//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad class of a failure, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    /// Bad arguments or configuration.
    Config,
    /// Input data is malformed or unusable.
    Data,
    /// The estimator cannot be computed on this data.
    Numeric,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("too few rows: n = {n} must exceed the number of coefficients k = {k}")]
    TooFewRows { n: usize, k: usize },

    #[error("design matrix is rank deficient; linearly dependent columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: String, row: usize },

    #[error(
        "leverage equals one for rows {rows:?}; HC2/HC3/BM are undefined there \
         (use HC1 or the wild bootstrap instead)"
    )]
    LeverageInfeasible { rows: Vec<usize> },

    #[error("cluster dimension '{dimension}' has {clusters} cluster(s); at least 2 are required")]
    SingleCluster { dimension: String, clusters: usize },

    #[error("coefficient '{coefficient}' has zero standard error but a nonzero estimate")]
    ZeroSe { coefficient: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("multiple-testing method needs statistics and replicates: {0}")]
    MissingStatistics(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resampling gave up after {redraws} redraws of rank-deficient replications")]
    DegenerateResample { redraws: usize },

    #[error("{replications} replications are too few for this rule (need at least {needed})")]
    TooFewReplications { replications: usize, needed: usize },

    #[error("bootstrap-t needs a standard error for every replication")]
    MissingPerReplicationSe,

    #[error("unknown wild weight law '{0}' (expected rademacher, mammen or webb)")]
    WeightLawUnavailable(String),

    #[error("randomization inference needs a treatment column")]
    NoTreatment,

    #[error("unknown assignment scheme '{0}'")]
    UnknownAssignmentScheme(String),

    #[error("unknown column '{0}'")]
    UnknownColumn(String),
}

impl Error {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::TooFewRows { .. } => "too_few_rows",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::LeverageInfeasible { .. } => "leverage_infeasible",
            Error::SingleCluster { .. } => "single_cluster",
            Error::ZeroSe { .. } => "zero_se",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::MissingStatistics(_) => "missing_statistics",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateResample { .. } => "degenerate_resample",
            Error::TooFewReplications { .. } => "too_few_replications",
            Error::MissingPerReplicationSe => "missing_per_replication_se",
            Error::WeightLawUnavailable(_) => "weight_law_unavailable",
            Error::NoTreatment => "no_treatment",
            Error::UnknownAssignmentScheme(_) => "unknown_assignment_scheme",
            Error::UnknownColumn(_) => "unknown_column",
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_)
            | Error::WeightLawUnavailable(_)
            | Error::UnknownAssignmentScheme(_)
            | Error::UnknownColumn(_)
            | Error::MissingStatistics(_)
            | Error::TooFewReplications { .. } => ErrorCategory::Config,
            Error::DimensionMismatch { .. }
            | Error::NonFinite { .. }
            | Error::TooFewRows { .. }
            | Error::NoTreatment
            | Error::ShapeMismatch(_) => ErrorCategory::Data,
            Error::RankDeficient { .. }
            | Error::LeverageInfeasible { .. }
            | Error::SingleCluster { .. }
            | Error::ZeroSe { .. }
            | Error::DegenerateResample { .. }
            | Error::MissingPerReplicationSe => ErrorCategory::Numeric,
        }
    }

    /// Short remediation hint for human readers, when one exists.
    pub fn hint(&self) -> Option<&'static str> {
        match self {
            Error::LeverageInfeasible { .. } => {
                Some("drop the saturating dummy, or use vcov = hc1 or a wild bootstrap")
            }
            Error::RankDeficient { .. } => Some("remove or combine the collinear columns"),
            Error::SingleCluster { .. } => Some("cluster at a level with at least two groups"),
            Error::TooFewRows { .. } => Some("add observations or drop covariates"),
            Error::ZeroSe { .. } => {
                Some("the coefficient is not identified by the chosen variance estimator")
            }
            _ => None,
        }
    }
}
