//! Declarative analysis configuration (TOML) and command-line overrides.
//!
//! Precedence: a flag given on the command line replaces the matching
//! config-file value; everything else comes from the file or its defaults.

use std::path::{Path, PathBuf};

use robinf_core::mht::MhtMethod;
use robinf_core::resample::{AssignmentScheme, DEFAULT_EXHAUSTIVE_THRESHOLD};
use robinf_core::testing::Alternative;
use robinf_core::{Scheme, VcovKind, WeightLaw};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::ingest::Columns;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// CSV input; relative paths resolve against the config file's directory.
    pub input: PathBuf,
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Zero, one, or two cluster columns.
    #[serde(default)]
    pub clusters: Vec<String>,
    #[serde(default)]
    pub treatment: Option<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default = "default_vcov")]
    pub vcov: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub alternative: Alternative,
    #[serde(default)]
    pub mht: Option<MhtConfig>,
    #[serde(default)]
    pub resample: Option<ResampleConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub assumptions: Assumptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhtConfig {
    pub method: String,
    /// Outcome columns forming one family; each is regressed on the same
    /// right-hand side.
    #[serde(default)]
    pub family: Vec<String>,
    /// Coefficient tested in every outcome regression (defaults to the
    /// treatment, else the first non-intercept regressor).
    #[serde(default)]
    pub coefficient: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleConfig {
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default = "default_reps")]
    pub replications: usize,
    /// Mandatory for any resampling run.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_law")]
    pub weight_law: String,
    #[serde(default)]
    pub coefficient: Option<String>,
    /// Impose `coefficient = null` on residual and wild bootstrap DGPs.
    #[serde(default)]
    pub null: Option<f64>,
    #[serde(default = "default_assignment")]
    pub assignment: String,
    #[serde(default = "default_threshold")]
    pub exhaustive_threshold: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            scheme: None,
            replications: default_reps(),
            seed: None,
            weight_law: default_law(),
            coefficient: None,
            null: None,
            assignment: default_assignment(),
            exhaustive_threshold: default_threshold(),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// JSON report path; standard output when absent.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Optional flat CSV of the coefficient table.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub timestamp: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            path: None,
            csv: None,
            timestamp: true,
        }
    }
}

/// What is being estimated and where the uncertainty comes from. Left
/// empty, the report fills in a template from the model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assumptions {
    #[serde(default)]
    pub estimand: Option<String>,
    #[serde(default)]
    pub uncertainty_source: Option<String>,
}

fn default_true() -> bool {
    true
}
fn default_vcov() -> String {
    "hc1".into()
}
fn default_alpha() -> f64 {
    0.05
}
fn default_reps() -> usize {
    robinf_core::resample::MIN_REPS_PIVOTAL
}
fn default_law() -> String {
    "rademacher".into()
}
fn default_assignment() -> String {
    "complete".into()
}
fn default_threshold() -> u64 {
    DEFAULT_EXHAUSTIVE_THRESHOLD
}

/// Command-line values that replace config-file entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub vcov: Option<String>,
    pub mht: Option<String>,
    pub boot: Option<String>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub no_timestamp: bool,
    pub workers: Option<usize>,
}

/// Parsed and checked view of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub outcomes: Vec<String>,
    pub vcov: VcovKind,
    pub mht: Option<MhtMethod>,
    pub scheme: Option<Scheme>,
    pub weight_law: WeightLaw,
    pub assignment: AssignmentScheme,
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and resolves `input` against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.input.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.input = dir.join(&cfg.input);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.vcov {
            self.vcov = v.clone();
        }
        if let Some(m) = &o.mht {
            match &mut self.mht {
                Some(cfg) => cfg.method = m.clone(),
                None => {
                    self.mht = Some(MhtConfig {
                        method: m.clone(),
                        family: Vec::new(),
                        coefficient: None,
                    })
                }
            }
        }
        let touches_resample = o.boot.is_some() || o.reps.is_some() || o.seed.is_some() || o.workers.is_some();
        if touches_resample {
            let r = self.resample.get_or_insert_with(ResampleConfig::default);
            if let Some(b) = &o.boot {
                r.scheme = Some(b.clone());
            }
            if let Some(n) = o.reps {
                r.replications = n;
            }
            if let Some(s) = o.seed {
                r.seed = Some(s);
            }
            if let Some(w) = o.workers {
                r.workers = Some(w);
            }
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
        if let Some(p) = &o.out {
            self.output.path = Some(p.clone());
        }
        if let Some(p) = &o.csv {
            self.output.csv = Some(p.clone());
        }
        if o.no_timestamp {
            self.output.timestamp = false;
        }
    }

    pub fn columns(&self, outcomes: &[String]) -> Columns {
        Columns {
            outcomes: outcomes.to_vec(),
            covariates: self.covariates.clone(),
            clusters: self.clusters.clone(),
            treatment: self.treatment.clone(),
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        let vcov: VcovKind = self.vcov.parse()?;
        match (vcov, self.clusters.len()) {
            (VcovKind::ClusterLz, 0) => return bad("vcov 'cluster' needs a cluster column".into()),
            (VcovKind::Multiway, n) if n != 2 => {
                return bad(format!("vcov 'multiway' needs exactly two cluster columns, got {n}"))
            }
            (_, n) if n > 2 => return bad(format!("at most two cluster columns are supported, got {n}")),
            _ => {}
        }

        let mht = match &self.mht {
            None => None,
            Some(m) => {
                if m.family.is_empty() {
                    return bad("mht.family must list at least one outcome column".into());
                }
                Some(m.method.parse::<MhtMethod>()?)
            }
        };
        let outcomes = match (&self.mht, &self.outcome) {
            (Some(m), Some(o)) if !m.family.contains(o) => {
                return bad(format!("outcome '{o}' is not in mht.family"));
            }
            (Some(m), _) => m.family.clone(),
            (None, Some(o)) => vec![o.clone()],
            (None, None) => return bad("set `outcome` or an mht family".into()),
        };
        let mut seen = std::collections::HashSet::new();
        for c in outcomes
            .iter()
            .chain(&self.covariates)
            .chain(&self.clusters)
            .chain(&self.treatment)
        {
            if !seen.insert(c) {
                return bad(format!("column '{c}' is used more than once"));
            }
        }

        let resample = self.resample.clone().unwrap_or_default();
        let scheme = resample.scheme.as_deref().map(str::parse::<Scheme>).transpose()?;
        let needs_seed = scheme.is_some() || mht.is_some_and(MhtMethod::needs_replicates);
        if needs_seed && resample.seed.is_none() {
            return bad("resampling requires an explicit resample.seed".into());
        }
        if resample.replications == 0 {
            return bad("resample.replications must be at least 1".into());
        }
        if scheme == Some(Scheme::RandomizationInference) && self.treatment.is_none() {
            return Err(robinf_core::Error::NoTreatment.into());
        }
        Ok(Resolved {
            outcomes,
            vcov,
            mht,
            scheme,
            weight_law: resample.weight_law.parse()?,
            assignment: resample.assignment.parse()?,
        })
    }
}
