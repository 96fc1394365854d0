//! Monte-Carlo laboratory: data-generating processes, missingness
//! mechanisms, the estimator registry and the replication runner.

mod dgp;
mod missingness;
mod scenario;

use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub use dgp::{
    cox_event_time, draw_x, draw_x12, gen_cox, gen_interaction, gen_quadratic, lognormal_params, noise_variance, CovDist,
    Dgp, XDist, CALIBRATION_DRAWS, CALIBRATION_SEED,
};
pub use missingness::{apply_mar, apply_mcar, calibrate_mar_intercept, mar_slope, outcome_values, Mechanism};
pub use scenario::{builtin, builtin_names, ScenarioConfig, SimMethod, BUILTIN_SEED};

use crate::covariate::CovariateModelSpec;
use crate::dataset::Dataset;
use crate::engine::{self, default_fcs_specs, jav_config, EngineConfig};
use crate::error::{Error, Result};
use crate::formula::ModelFormula;
use crate::parallel;
use crate::pooling;
use crate::rng::{stage, Streams};
use crate::substantive::{SubstantiveFamily, SubstantiveModel};

/// Size of the fresh sample used to calibrate the MAR intercept.
pub const MAR_CALIBRATION_DRAWS: usize = 200_000;

/// One method's result for one parameter in one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterResult {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Per-method results of one replication; `None` marks a failed method.
pub type ReplicationResult = Vec<Option<Vec<ParameterResult>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: SimMethod,
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    /// Percentage of replications whose interval covers the truth.
    pub coverage: f64,
    pub mc_error_mean: f64,
    pub mc_error_cov: f64,
    /// Replications in which this method failed.
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub reps: usize,
    /// Replications in which every method succeeded; the statistics use these only.
    pub n_used: usize,
    pub rows: Vec<SummaryRow>,
}

impl ScenarioSummary {
    pub fn row(&self, method: SimMethod, parameter: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.parameter == parameter)
    }

    /// Columns: scenario, method, parameter, mean, sd, coverage,
    /// mc_error_mean, mc_error_cov, n_failed.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["scenario", "method", "parameter", "mean", "sd", "coverage", "mc_error_mean", "mc_error_cov", "n_failed"])?;
        for r in &self.rows {
            w.write_record([
                self.scenario.clone(),
                r.method.to_string(),
                r.parameter.clone(),
                format!("{:.6}", r.mean),
                format!("{:.6}", r.sd),
                format!("{:.6}", r.coverage),
                format!("{:.6}", r.mc_error_mean),
                format!("{:.6}", r.mc_error_cov),
                r.n_failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scenario constants resolved once before the replications.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub family: SubstantiveFamily,
    pub formula: ModelFormula,
    pub labels: Vec<String>,
    pub truth: Vec<f64>,
    /// `(a0, a1)` for MAR scenarios.
    pub mar: Option<(f64, f64)>,
}

pub fn prepare(config: &ScenarioConfig) -> Result<Prepared> {
    config.validate()?;
    let formula = ModelFormula::parse(config.dgp.formula())?;
    let mar = match config.mechanism {
        Mechanism::Mcar { .. } => None,
        Mechanism::Mar { target_p_obs } => {
            let mut rng = Streams::new(config.seed).child(stage::CALIBRATE).rng();
            let sample = config.dgp.generate(MAR_CALIBRATION_DRAWS, &mut rng);
            let y = outcome_values(&sample)?;
            let a1 = mar_slope(y);
            Some((calibrate_mar_intercept(y, a1, target_p_obs)?, a1))
        }
    };
    Ok(Prepared { family: config.dgp.family(), labels: formula.labels(), formula, truth: config.dgp.truth(), mar })
}

/// Generate and mask the data of replication `rep`.
pub fn replication_data(config: &ScenarioConfig, prep: &Prepared, rep: usize) -> Result<Dataset> {
    let streams = Streams::new(config.seed).child2(stage::REPLICATION, rep as u64);
    let full = config.dgp.generate(config.n, &mut streams.child(stage::GENERATE).rng());
    let mut rng = streams.child(stage::MASK).rng();
    match (config.mechanism, prep.mar) {
        (Mechanism::Mcar { p_obs }, _) => Ok(apply_mcar(&full, p_obs, &mut rng)),
        (Mechanism::Mar { .. }, Some((a0, a1))) => apply_mar(&full, a0, a1, &mut rng),
        (Mechanism::Mar { .. }, None) => Err(Error::Config("MAR scenario without calibration".into())),
    }
}

/// Numerical failures that exclude a replication rather than stop the run.
fn is_failure(e: &Error) -> bool {
    matches!(e, Error::Aborted { .. } | Error::Pooling(_) | Error::Fit(_))
}

fn complete_case(d: &Dataset, prep: &Prepared, level: f64) -> Result<Vec<ParameterResult>> {
    let model = SubstantiveModel::new(prep.family, prep.formula.clone(), d)?;
    let rows = d.complete_rows();
    let fit = model.fit_rows(d, &rows)?;
    let upper = 0.5 + level / 2.0;
    let q = match prep.family {
        SubstantiveFamily::Linear => {
            let df = rows.len() as f64 - fit.estimates.len() as f64;
            StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Pooling(e.to_string()))?.inverse_cdf(upper)
        }
        _ => Normal::standard().inverse_cdf(upper),
    };
    Ok(fit
        .estimates
        .iter()
        .zip(&fit.variances)
        .map(|(&e, &v)| ParameterResult { estimate: e, ci_low: e - q * v.sqrt(), ci_high: e + q * v.sqrt() })
        .collect())
}

fn pooled(datasets: &[Dataset], formula: &ModelFormula, prep: &Prepared, level: f64) -> Result<Vec<ParameterResult>> {
    let rows = pooling::analyze(datasets, prep.family, formula, level)?;
    Ok(rows.into_iter().map(|(_, p)| ParameterResult { estimate: p.point, ci_low: p.ci_low, ci_high: p.ci_high }).collect())
}

/// Run one estimator on one masked dataset.
pub fn run_method(
    method: SimMethod,
    d: &Dataset,
    config: &ScenarioConfig,
    prep: &Prepared,
    streams: Streams,
) -> Result<Vec<ParameterResult>> {
    let fcs_iter = config.fcs_iterations.unwrap_or(engine::DEFAULT_FCS_ITERATIONS);
    let smc_iter = config.smcfcs_iterations.unwrap_or(engine::DEFAULT_SMCFCS_ITERATIONS);
    let quiet = |mut c: EngineConfig| {
        c.record_traces = false;
        c
    };
    match method {
        SimMethod::Cc => complete_case(d, prep, config.level),
        SimMethod::FcsLinear => {
            let (specs, derived) = default_fcs_specs(d, prep.family, &prep.formula)?;
            let mut cfg = quiet(EngineConfig::fcs(config.m, streams.seed(), specs).with_iterations(fcs_iter));
            cfg.derived_columns = derived;
            let out = engine::run(d, &cfg, streams)?;
            pooled(&out.datasets, &prep.formula, prep, config.level)
        }
        SimMethod::Jav => {
            let setup = jav_config(d, &prep.formula, config.m, fcs_iter, streams.seed())?;
            let cfg = quiet(setup.config);
            let out = engine::run(&setup.dataset, &cfg, streams)?;
            pooled(&out.datasets, &setup.formula, prep, config.level)
        }
        SimMethod::Smcfcs => {
            let specs = d
                .partial_covariates()
                .into_iter()
                .map(|c| CovariateModelSpec::default_for(d, &d.column(c).name))
                .collect::<Result<Vec<_>>>()?;
            let cfg = quiet(
                EngineConfig::smcfcs(config.m, streams.seed(), prep.family, prep.formula.clone(), specs)
                    .with_iterations(smc_iter),
            );
            let out = engine::run(d, &cfg, streams)?;
            pooled(&out.datasets, &prep.formula, prep, config.level)
        }
    }
}

/// Every configured method on replication `rep`.
pub fn run_replication(config: &ScenarioConfig, prep: &Prepared, rep: usize) -> Result<ReplicationResult> {
    let d = replication_data(config, prep, rep)?;
    let streams = Streams::new(config.seed).child2(stage::REPLICATION, rep as u64);
    config
        .methods
        .iter()
        .map(|&m| {
            let s = streams.child2(stage::METHOD, m as u64);
            match run_method(m, &d, config, prep, s) {
                Ok(r) => Ok(Some(r)),
                Err(e) if is_failure(&e) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Aggregate replication results. A replication in which any method failed
/// is excluded for all methods.
pub fn summarize(config: &ScenarioConfig, prep: &Prepared, results: &[ReplicationResult]) -> ScenarioSummary {
    let used: Vec<&ReplicationResult> = results.iter().filter(|r| r.iter().all(Option::is_some)).collect();
    let n = used.len() as f64;
    let mut rows = Vec::new();
    for (mi, &method) in config.methods.iter().enumerate() {
        let n_failed = results.iter().filter(|r| r[mi].is_none()).count();
        for (pi, label) in prep.labels.iter().enumerate() {
            let truth = prep.truth[pi];
            let vals: Vec<ParameterResult> = used.iter().map(|r| r[mi].as_ref().expect("used")[pi]).collect();
            let mean = vals.iter().map(|v| v.estimate).sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v.estimate - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let hits = vals.iter().filter(|v| v.ci_low <= truth && truth <= v.ci_high).count() as f64;
            let cov = 100.0 * hits / n;
            rows.push(SummaryRow {
                method,
                parameter: label.clone(),
                truth,
                mean,
                sd,
                coverage: cov,
                mc_error_mean: sd / n.sqrt(),
                mc_error_cov: (cov * (100.0 - cov) / n).sqrt(),
                n_failed,
            });
        }
    }
    ScenarioSummary { scenario: config.name.clone(), reps: results.len(), n_used: used.len(), rows }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioSummary> {
    let prep = prepare(config)?;
    let results = parallel::map_indexed(config.reps, |r| run_replication(config, &prep, r))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(config, &prep, &results))
}
