//! Orchestration: ingest, fit, variance, tests, multiple testing and
//! resampling, assembled into one report document.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use robinf_core::mht::{correct, studentize, Hypothesis, MhtMethod, MhtReport, PValueFamily};
use robinf_core::resample::{
    bootstrap_se, bootstrap_t, percentile_ci, randomization_inference, run_bootstrap, BootstrapT, RiResult,
    TCentering, MIN_REPS_SE,
};
use robinf_core::testing::t_tests_with;
use robinf_core::vcov::{compute_vcov, effective_clusters};
use robinf_core::{
    fit_ols, ClusterMap, Dataset, FitResult, ModelSpec, ResamplePlan, Scheme, TestReport, VcovKind, INTERCEPT,
};
use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, Resolved};
use crate::error::{CliError, Result};
use crate::ingest::{ingest_csv, IngestReport, Ingested};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionStatement {
    pub estimand: String,
    pub uncertainty_source: String,
    /// True when the text was generated rather than supplied.
    pub templated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub outcome: String,
    pub n: usize,
    pub k: usize,
    pub tests: TestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhtSection {
    /// Coefficient tested in each outcome regression.
    pub coefficient: String,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub replicate_scheme: Option<Scheme>,
    pub report: MhtReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub se: f64,
    /// Absent when `r` is too small for the requested level.
    pub percentile_ci: Option<(f64, f64)>,
    /// Present when `r` reaches the pivotal minimum.
    pub bootstrap_t: Option<BootstrapT>,
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleSection {
    pub outcome: String,
    pub coefficient: String,
    pub scheme: Scheme,
    pub replications: usize,
    pub seed: u64,
    pub null: Option<f64>,
    pub bootstrap: Option<BootstrapSummary>,
    pub randomization: Option<RiResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: ToolInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
    pub config: AnalysisConfig,
    pub input: IngestReport,
    pub assumptions: AssumptionStatement,
    pub models: Vec<ModelReport>,
    pub mht: Option<MhtSection>,
    pub resampling: Vec<ResampleSection>,
    /// Every warning raised along the way; empty means a clean run.
    pub warnings: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Config(format!("cannot serialize report: {e}")))
    }

    /// Flat coefficient table, one row per (outcome, coefficient).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| CliError::Config(format!("cannot write coefficient table: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "outcome", "name", "estimate", "se", "statistic", "dof", "p_value", "ci_low", "ci_high", "rejected",
        ])
        .map_err(io)?;
        for m in &self.models {
            for c in &m.tests.coefficients {
                w.write_record([
                    m.outcome.clone(),
                    c.name.clone(),
                    c.estimate.to_string(),
                    c.se.to_string(),
                    c.statistic.to_string(),
                    c.dof.to_string(),
                    c.p_value.to_string(),
                    c.ci_low.to_string(),
                    c.ci_high.to_string(),
                    c.rejected.to_string(),
                ])
                .map_err(io)?;
            }
        }
        w.flush().map_err(|e| CliError::Config(format!("cannot write coefficient table: {e}")))
    }
}

/// Variance kind recomputed inside replications: multiway falls back to
/// one-way clustering on the first dimension (replications carry one map).
fn replicate_kind(kind: VcovKind) -> VcovKind {
    match kind {
        VcovKind::Multiway => VcovKind::ClusterLz,
        k => k,
    }
}

fn model_spec(cfg: &AnalysisConfig) -> ModelSpec {
    ModelSpec {
        covariates: Some(cfg.covariates.clone()),
        intercept: cfg.intercept,
        include_treatment: cfg.treatment.is_some(),
    }
}

/// Explicit name, else the treatment, else the first non-intercept regressor.
fn focal_coefficient(explicit: Option<&String>, cfg: &AnalysisConfig, fit: &FitResult) -> Result<usize> {
    let name = explicit
        .or(cfg.treatment.as_ref())
        .cloned()
        .or_else(|| fit.names().iter().find(|n| n.as_str() != INTERCEPT).cloned())
        .ok_or_else(|| CliError::Config("the model has no coefficient besides the intercept".into()))?;
    Ok(fit.coef_index(&name)?)
}

struct Model {
    data: Dataset,
    fit: FitResult,
}

fn cluster_maps<'a>(data: &'a Dataset, cfg: &AnalysisConfig) -> Vec<&'a ClusterMap> {
    cfg.clusters.iter().filter_map(|c| data.cluster(c)).collect()
}

/// Runs the full analysis described by `cfg`.
pub fn run_analysis(cfg: &AnalysisConfig) -> Result<Report> {
    let resolved = cfg.resolve()?;
    let ingested = ingest_csv(&cfg.input, &cfg.columns(&resolved.outcomes))?;
    analyze_dataset(cfg, &resolved, ingested)
}

/// Same as [`run_analysis`] on already-ingested data.
pub fn analyze_dataset(cfg: &AnalysisConfig, resolved: &Resolved, ingested: Ingested) -> Result<Report> {
    let spec = model_spec(cfg);
    let mut warnings = Vec::new();
    if ingested.report.dropped > 0 {
        warnings.push(format!(
            "{} of {} rows dropped for missing values",
            ingested.report.dropped, ingested.report.rows_read
        ));
    }

    let mut models = Vec::new();
    let mut reports = Vec::new();
    for (name, values) in &ingested.outcomes {
        let data = ingested.data.with_outcome(values.clone())?.renamed_outcome(name);
        let fit = fit_ols(&data, &spec)?;
        let maps = cluster_maps(&data, cfg);
        let vcov = compute_vcov(&fit, resolved.vcov, &maps)?;
        let mut tests = t_tests_with(&fit, &vcov, cfg.alpha, cfg.alternative)?;
        if let Some(first) = maps.first() {
            let eff = (0..fit.k())
                .map(|j| effective_clusters(&fit, first, j))
                .collect::<robinf_core::Result<Vec<_>>>()?;
            tests.diagnostics.effective_clusters = Some(eff);
        }
        if tests.diagnostics.psd_repaired {
            warnings.push(format!("{name}: variance matrix repaired to be positive semi-definite"));
        }
        for note in &tests.diagnostics.notes {
            warnings.push(format!("{name}: {note}"));
        }
        reports.push(ModelReport {
            outcome: name.clone(),
            n: fit.n(),
            k: fit.k(),
            tests,
        });
        models.push(Model { data, fit });
    }

    let mht = match resolved.mht {
        Some(method) => Some(run_mht(cfg, resolved, method, &spec, &models, &reports, &mut warnings)?),
        None => None,
    };

    let mut resampling = Vec::new();
    if let Some(scheme) = resolved.scheme {
        for (model, report) in models.iter().zip(&reports) {
            resampling.push(run_resample(cfg, resolved, scheme, &spec, model, report, &mut warnings)?);
        }
    }

    let assumptions = assumption_statement(cfg, resolved, &models[0].fit)?;
    let generated_at = cfg
        .output
        .timestamp
        .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
    Ok(Report {
        tool: ToolInfo {
            name: "robinf".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        generated_at,
        config: cfg.clone(),
        input: ingested.report,
        assumptions,
        models: reports,
        mht,
        resampling,
        warnings,
    })
}

fn base_plan(cfg: &AnalysisConfig, resolved: &Resolved, scheme: Scheme, data: &Dataset) -> Result<ResamplePlan> {
    let r = cfg.resample.clone().unwrap_or_default();
    let seed = r
        .seed
        .ok_or_else(|| CliError::Config("resampling requires an explicit resample.seed".into()))?;
    let mut plan = ResamplePlan::new(scheme, r.replications, seed)
        .with_weight_law(resolved.weight_law)
        .with_assignment(resolved.assignment)
        .with_exhaustive_threshold(r.exhaustive_threshold);
    if let Some(w) = r.workers {
        plan = plan.with_workers(w);
    }
    if let Some(map) = cfg.clusters.first().and_then(|c| data.cluster(c)) {
        plan = plan.with_clusters(map.clone());
    }
    Ok(plan)
}

fn run_mht(
    cfg: &AnalysisConfig,
    resolved: &Resolved,
    method: MhtMethod,
    spec: &ModelSpec,
    models: &[Model],
    reports: &[ModelReport],
    warnings: &mut Vec<String>,
) -> Result<MhtSection> {
    let explicit = cfg.mht.as_ref().and_then(|m| m.coefficient.as_ref());
    let coef = focal_coefficient(explicit, cfg, &models[0].fit)?;
    let coef_name = models[0].fit.names()[coef].clone();
    let hypotheses = reports
        .iter()
        .map(|m| {
            let c = &m.tests.coefficients[coef];
            Hypothesis {
                id: m.outcome.clone(),
                raw_p: c.p_value,
                statistic: Some(c.statistic),
            }
        })
        .collect();
    let family = PValueFamily::new(hypotheses, cfg.alpha)?;
    if !method.needs_replicates() {
        return Ok(MhtSection {
            coefficient: coef_name,
            replications: None,
            seed: None,
            replicate_scheme: None,
            report: correct(method, &family, None)?,
        });
    }

    // Every outcome shares the seed, so replicate b uses the same weights
    // (WY) or the same rows (RW) across the family.
    let clustered = !cfg.clusters.is_empty();
    let scheme = match (method, clustered) {
        (MhtMethod::RomanoWolf, _) => Scheme::Pairs,
        (_, true) => Scheme::WildCluster,
        (_, false) => Scheme::Wild,
    };
    let kind = replicate_kind(resolved.vcov);
    let mut columns = Vec::with_capacity(models.len());
    let mut plan_out = None;
    for model in models {
        let mut plan = base_plan(cfg, resolved, scheme, &model.data)?.with_se(kind);
        if scheme != Scheme::Pairs {
            plan = plan.with_null(coef, 0.0);
        }
        let dist = run_bootstrap(&model.data, spec, &plan)?;
        let ses = dist.ses().ok_or(robinf_core::Error::MissingPerReplicationSe)?;
        let center = dist.truth()[coef];
        let t = studentize(
            &dist.draws().columns(coef, 1).into_owned(),
            &ses.columns(coef, 1).into_owned(),
            &[center],
        )?;
        if dist.redraws() > 0 {
            warnings.push(format!("{}: {} degenerate draws redrawn", model.data.outcome_name(), dist.redraws()));
        }
        columns.push(t);
        plan_out = Some(plan);
    }
    let plan = plan_out.expect("family is non-empty");
    for w in plan.warnings() {
        warnings.push(format!("mht replicates: {w}"));
    }
    let r = plan.replications;
    let replicates = DMatrix::from_fn(r, columns.len(), |b, j| columns[j][(b, 0)]);
    Ok(MhtSection {
        coefficient: coef_name,
        replications: Some(r),
        seed: Some(plan.seed),
        replicate_scheme: Some(scheme),
        report: correct(method, &family, Some(&replicates))?,
    })
}

fn run_resample(
    cfg: &AnalysisConfig,
    resolved: &Resolved,
    scheme: Scheme,
    spec: &ModelSpec,
    model: &Model,
    report: &ModelReport,
    warnings: &mut Vec<String>,
) -> Result<ResampleSection> {
    let rcfg = cfg.resample.clone().unwrap_or_default();
    let coef = focal_coefficient(rcfg.coefficient.as_ref(), cfg, &model.fit)?;
    let outcome = report.outcome.clone();
    let mut plan = base_plan(cfg, resolved, scheme, &model.data)?;
    let mut section = ResampleSection {
        outcome: outcome.clone(),
        coefficient: model.fit.names()[coef].clone(),
        scheme,
        replications: plan.replications,
        seed: plan.seed,
        null: None,
        bootstrap: None,
        randomization: None,
    };

    if scheme == Scheme::RandomizationInference {
        let ri = randomization_inference(&model.data, spec, &plan)?;
        if ri.skipped > 0 {
            warnings.push(format!("{outcome}: {} degenerate reassignments skipped", ri.skipped));
        }
        if !ri.exhaustive && plan.replications < MIN_REPS_SE {
            warnings.push(format!(
                "{outcome}: {} randomization draws is below the recommended {MIN_REPS_SE}",
                plan.replications
            ));
        }
        section.randomization = Some(ri);
        return Ok(section);
    }

    if let (Some(v), true) = (rcfg.null, scheme != Scheme::Pairs) {
        plan = plan.with_null(coef, v);
        section.null = Some(v);
    }
    let pivotal = plan.replications >= robinf_core::mht::MIN_REPLICATES;
    let kind = replicate_kind(resolved.vcov);
    if pivotal {
        plan = plan.with_se(kind);
    }
    let dist = run_bootstrap(&model.data, spec, &plan)?;
    for w in dist.warnings() {
        warnings.push(format!("{outcome}: {w}"));
    }
    if dist.redraws() > 0 {
        warnings.push(format!("{outcome}: {} degenerate draws redrawn", dist.redraws()));
    }
    let percentile = match percentile_ci(&dist, coef, cfg.alpha) {
        Ok(ci) => Some(ci),
        Err(e) => {
            warnings.push(format!("{outcome}: percentile interval skipped: {e}"));
            None
        }
    };
    let boot_t = if pivotal {
        let maps = cluster_maps(&model.data, cfg);
        let vcov = compute_vcov(&model.fit, kind, &maps[..maps.len().min(1)])?;
        let centering = if plan.null.is_some() {
            TCentering::Truth
        } else {
            TCentering::BootstrapMean
        };
        Some(bootstrap_t(&dist, &model.fit, &vcov, coef, cfg.alpha, centering)?)
    } else {
        warnings.push(format!(
            "{outcome}: bootstrap-t skipped below {} replications",
            robinf_core::mht::MIN_REPLICATES
        ));
        None
    };
    section.bootstrap = Some(BootstrapSummary {
        se: bootstrap_se(&dist, coef)?,
        percentile_ci: percentile,
        bootstrap_t: boot_t,
        redraws: dist.redraws(),
    });
    Ok(section)
}

fn assumption_statement(cfg: &AnalysisConfig, resolved: &Resolved, fit: &FitResult) -> Result<AssumptionStatement> {
    let given = &cfg.assumptions;
    let focal = focal_coefficient(cfg.mht.as_ref().and_then(|m| m.coefficient.as_ref()), cfg, fit)
        .ok()
        .map(|j| fit.names()[j].clone());
    let estimand = given.estimand.clone().unwrap_or_else(|| {
        let outcomes = resolved.outcomes.join(", ");
        match &focal {
            Some(c) => format!(
                "Population least-squares coefficient on '{c}' in the linear projection of {outcomes} on [{}]",
                fit.names().join(", ")
            ),
            None => format!("Population mean of {outcomes}"),
        }
    });
    let uncertainty_source = given.uncertainty_source.clone().unwrap_or_else(|| {
        if resolved.scheme == Some(Scheme::RandomizationInference) {
            "Design-based: random assignment of treatment with potential outcomes held fixed".into()
        } else if !cfg.clusters.is_empty() {
            format!(
                "Sampling of clusters ({}) from a larger population, errors correlated within clusters",
                cfg.clusters.join(" x ")
            )
        } else {
            "Independent sampling of rows from a larger population, heteroskedasticity allowed".into()
        }
    });
    Ok(AssumptionStatement {
        templated: given.estimand.is_none() || given.uncertainty_source.is_none(),
        estimand,
        uncertainty_source,
    })
}
