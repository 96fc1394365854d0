//! The iterative imputation engines: standard FCS and SMC-FCS.
//!
//! Each of the `m` imputations is an independent chain started from a fresh
//! random initialization. Chains may run concurrently; each one draws from
//! its own stream so results do not depend on scheduling.

mod chain;
mod diagnostics;
mod jav;
mod specs;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariate::{CovariateModel, CovariateModelSpec};
use crate::dataset::{Column, Dataset, VariableKind, VariableRole};
use crate::error::{Error, Result};
use crate::fitters;
use crate::formula::ModelFormula;
use crate::parallel;
use crate::rng::{stage, Streams};
use crate::substantive::{SubstantiveFamily, SubstantiveModel};

pub use chain::{binary_probability, impute_cell_rejection, initialize, CellDraw};
pub use diagnostics::{Diagnostics, TraceBlock, TraceRow, VariableDiagnostics};
pub use jav::{jav_config, JavSetup};
pub use specs::default_fcs_specs;

pub const DEFAULT_FCS_ITERATIONS: usize = 10;
pub const DEFAULT_SMCFCS_ITERATIONS: usize = 20;
pub const DEFAULT_MAX_REJECTIONS: usize = 100_000;
/// Fresh re-initializations attempted after a fit failure inside a chain.
pub const FIT_RETRIES: usize = 5;
pub const NELSON_AALEN_COLUMN: &str = "_nelson_aalen";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fcs,
    Smcfcs,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fcs => "fcs",
            Method::Smcfcs => "smcfcs",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcs" => Ok(Method::Fcs),
            "smcfcs" => Ok(Method::Smcfcs),
            other => Err(Error::Config(format!("unknown method `{other}` (expected fcs or smcfcs)"))),
        }
    }
}

/// How SMC-FCS imputes a binary covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BinarySampler {
    /// Exact two-point enumeration of the target density.
    #[default]
    Enumerate,
    /// The same rejection loop used for continuous covariates.
    Rejection,
}

/// Columns computed once from fully observed data before imputation.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivedColumn {
    /// Marginal Nelson-Aalen cumulative hazard evaluated at each subject's time.
    NelsonAalen { name: String, time: String, event: String },
}

impl DerivedColumn {
    pub fn name(&self) -> &str {
        match self {
            DerivedColumn::NelsonAalen { name, .. } => name,
        }
    }

    fn materialize(&self, d: &Dataset) -> Result<Column> {
        match self {
            DerivedColumn::NelsonAalen { name, time, event } => {
                let t = &d.column_by_name(time)?.values;
                let e: Vec<bool> = d.column_by_name(event)?.values.iter().map(|v| *v == 1.0).collect();
                let h = fitters::nelson_aalen(t, &e)?;
                Ok(Column::complete(
                    name,
                    VariableKind::Continuous,
                    VariableRole::CompleteCovariate,
                    t.iter().map(|ti| h.eval(*ti)).collect(),
                ))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub method: Method,
    pub m: usize,
    pub iterations: usize,
    pub seed: u64,
    pub max_rejections: usize,
    pub substantive: Option<(SubstantiveFamily, ModelFormula)>,
    pub covariate_specs: Vec<CovariateModelSpec>,
    pub derived_columns: Vec<DerivedColumn>,
    pub binary_sampler: BinarySampler,
    /// Keep per-sweep parameter traces in the diagnostics.
    pub record_traces: bool,
}

impl EngineConfig {
    pub fn fcs(m: usize, seed: u64, covariate_specs: Vec<CovariateModelSpec>) -> Self {
        EngineConfig {
            method: Method::Fcs,
            m,
            iterations: DEFAULT_FCS_ITERATIONS,
            seed,
            max_rejections: DEFAULT_MAX_REJECTIONS,
            substantive: None,
            covariate_specs,
            derived_columns: vec![],
            binary_sampler: BinarySampler::default(),
            record_traces: true,
        }
    }

    pub fn smcfcs(
        m: usize,
        seed: u64,
        family: SubstantiveFamily,
        formula: ModelFormula,
        covariate_specs: Vec<CovariateModelSpec>,
    ) -> Self {
        EngineConfig {
            method: Method::Smcfcs,
            iterations: DEFAULT_SMCFCS_ITERATIONS,
            substantive: Some((family, formula)),
            ..EngineConfig::fcs(m, seed, covariate_specs)
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }
}

/// `m` completed datasets plus sampler diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub datasets: Vec<Dataset>,
    pub diagnostics: Diagnostics,
}

/// Everything a chain needs, resolved against the working dataset.
pub(crate) struct Prepared {
    pub method: Method,
    pub iterations: usize,
    pub max_rejections: usize,
    pub binary_sampler: BinarySampler,
    pub record_traces: bool,
    /// Input plus derived columns; missing cells hold NaN.
    pub data: Dataset,
    /// Covariate models in visiting order.
    pub models: Vec<CovariateModel>,
    pub substantive: Option<SubstantiveModel>,
    pub original_columns: usize,
}

fn prepare(d: &Dataset, config: &EngineConfig) -> Result<Prepared> {
    if config.m < 1 {
        return Err(Error::Config("number of imputations must be at least 1".into()));
    }
    if config.iterations < 1 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    if config.method == Method::Smcfcs && config.max_rejections < 1 {
        return Err(Error::Config("rejection cap must be at least 1".into()));
    }
    let mut data = d.clone();
    for dc in &config.derived_columns {
        let col = dc.materialize(d)?;
        data.push_column(col)?;
    }

    let mut by_target: Vec<Option<&CovariateModelSpec>> = vec![None; data.columns().len()];
    for spec in &config.covariate_specs {
        let idx = data.index_of(&spec.target).ok_or_else(|| Error::UnknownColumn(spec.target.clone()))?;
        if by_target[idx].replace(spec).is_some() {
            return Err(Error::Config(format!("more than one covariate model for `{}`", spec.target)));
        }
    }
    let order = data.missingness_order();
    let mut models = Vec::new();
    for &c in &order {
        let col = data.column(c);
        match by_target[c] {
            Some(spec) => {
                let model = CovariateModel::new(spec.clone(), &data)?;
                if col.n_missing() > 0 {
                    models.push(model);
                }
            }
            None if col.n_missing() > 0 => {
                return Err(Error::Config(format!("no covariate model for partially observed `{}`", col.name)));
            }
            None => {}
        }
    }

    let substantive = match (&config.method, &config.substantive) {
        (Method::Smcfcs, None) => return Err(Error::Config("smcfcs needs a substantive model".into())),
        (Method::Smcfcs, Some((family, formula))) => {
            let model = SubstantiveModel::new(*family, formula.clone(), &data)?;
            let derived: Vec<usize> = config.derived_columns.iter().filter_map(|dc| data.index_of(dc.name())).collect();
            for cm in &models {
                for t in &cm.bound.terms {
                    for &(c, _) in t {
                        if data.column(c).role.is_outcome_like() || derived.contains(&c) {
                            return Err(Error::Config(format!(
                                "smcfcs covariate model for `{}` must not use outcome-derived `{}`",
                                cm.spec.target,
                                data.column(c).name
                            )));
                        }
                    }
                }
                if cm.family() == crate::covariate::CovariateFamily::Normal
                    && data.column(cm.target).kind == VariableKind::Binary
                {
                    return Err(Error::Config(format!("smcfcs needs a logistic model for binary `{}`", cm.spec.target)));
                }
            }
            Some(model)
        }
        (Method::Fcs, _) => None,
    };

    Ok(Prepared {
        method: config.method,
        iterations: config.iterations,
        max_rejections: config.max_rejections,
        binary_sampler: config.binary_sampler,
        record_traces: config.record_traces,
        data,
        models,
        substantive,
        original_columns: d.columns().len(),
    })
}

/// Run the configured engine with streams rooted at `config.seed`.
pub fn impute(d: &Dataset, config: &EngineConfig) -> Result<ImputationResult> {
    run(d, config, Streams::new(config.seed))
}

pub fn run_fcs(d: &Dataset, config: &EngineConfig, streams: Streams) -> Result<ImputationResult> {
    if config.method != Method::Fcs {
        return Err(Error::Config("run_fcs called with a non-fcs configuration".into()));
    }
    run(d, config, streams)
}

pub fn run_smcfcs(d: &Dataset, config: &EngineConfig, streams: Streams) -> Result<ImputationResult> {
    if config.method != Method::Smcfcs {
        return Err(Error::Config("run_smcfcs called with a non-smcfcs configuration".into()));
    }
    run(d, config, streams)
}

pub fn run(d: &Dataset, config: &EngineConfig, streams: Streams) -> Result<ImputationResult> {
    let prepared = prepare(d, config)?;
    let chains = parallel::map_indexed(config.m, |m| {
        let base = streams.child2(stage::IMPUTATION, m as u64);
        let mut last = None;
        for attempt in 0..=FIT_RETRIES {
            match chain::run_chain(&prepared, m, base.child2(stage::RETRY, attempt as u64)) {
                Ok((data, mut diag)) => {
                    diag.retries = attempt;
                    return Ok((data, diag));
                }
                Err(chain::ChainError::Fit(e)) => last = Some(e),
                Err(chain::ChainError::Fatal(e)) => return Err(e),
            }
        }
        Err(Error::Aborted { imputation: m + 1, attempts: FIT_RETRIES + 1, reason: last.expect("at least one attempt") })
    });
    let mut datasets = Vec::with_capacity(config.m);
    let mut diagnostics = Diagnostics::new(&prepared);
    for chain in chains {
        let (mut data, diag) = chain?;
        data.truncate_columns(prepared.original_columns);
        datasets.push(data);
        diagnostics.merge(diag);
    }
    Ok(ImputationResult { datasets, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{VariableKind::*, VariableRole::*};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn linear_data(n: usize, seed: u64) -> Dataset {
        let mut rng = Streams::new(seed).rng();
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().zip(&z).map(|(x, z)| 1.0 + x + z + rng.sample::<f64, _>(StandardNormal)).collect();
        let mut xc = Column::complete("x", Continuous, PartialCovariate, x);
        for r in (0..n).step_by(3) {
            xc.observed[r] = false;
            xc.values[r] = f64::NAN;
        }
        Dataset::new(vec![
            Column::complete("y", Continuous, Outcome, y),
            xc,
            Column::complete("z", Continuous, CompleteCovariate, z),
        ])
        .unwrap()
    }

    fn smc_config(d: &Dataset, m: usize, seed: u64) -> EngineConfig {
        let f = ModelFormula::parse("y ~ x + z").unwrap();
        let spec = CovariateModelSpec::parse("x ~ z", d, None).unwrap();
        EngineConfig::smcfcs(m, seed, SubstantiveFamily::Linear, f, vec![spec]).with_iterations(3)
    }

    #[test]
    fn zero_missing_returns_copies() {
        let d = Dataset::new(vec![
            Column::complete("y", Continuous, Outcome, vec![1.0, 2.0, 3.0]),
            Column::complete("x", Continuous, PartialCovariate, vec![0.0, 1.0, 3.0]),
        ])
        .unwrap();
        let f = ModelFormula::parse("y ~ x").unwrap();
        let (specs, derived) = default_fcs_specs(&d, SubstantiveFamily::Linear, &f).unwrap();
        let mut cfg = EngineConfig::fcs(3, 1, specs);
        cfg.derived_columns = derived;
        let out = impute(&d, &cfg).unwrap();
        assert_eq!(out.datasets, vec![d.clone(); 3]);
        let out = impute(&d, &EngineConfig::smcfcs(2, 1, SubstantiveFamily::Linear, f, vec![])).unwrap();
        assert_eq!(out.datasets, vec![d; 2]);
    }

    #[test]
    fn observed_cells_preserved_and_missing_filled() {
        let d = linear_data(60, 5);
        for cfg in [smc_config(&d, 3, 9), {
            let f = ModelFormula::parse("y ~ x + z").unwrap();
            EngineConfig::fcs(3, 9, default_fcs_specs(&d, SubstantiveFamily::Linear, &f).unwrap().0)
        }] {
            let out = impute(&d, &cfg).unwrap();
            assert_eq!(out.datasets.len(), 3);
            for imp in &out.datasets {
                assert_eq!(imp.columns().len(), d.columns().len());
                for (a, b) in imp.columns().iter().zip(d.columns()) {
                    assert_eq!(a.observed, b.observed);
                    for r in 0..d.n_rows() {
                        if b.observed[r] {
                            assert_eq!(a.values[r].to_bits(), b.values[r].to_bits());
                        } else {
                            assert!(a.values[r].is_finite());
                        }
                    }
                }
            }
            assert_ne!(out.datasets[0], out.datasets[1]);
        }
    }

    #[test]
    fn same_seed_same_result() {
        let d = linear_data(40, 6);
        let a = impute(&d, &smc_config(&d, 2, 11)).unwrap();
        let b = impute(&d, &smc_config(&d, 2, 11)).unwrap();
        assert_eq!(a, b);
        let seq = parallel::run_with(parallel::Execution::Sequential, || impute(&d, &smc_config(&d, 2, 11)).unwrap());
        assert_eq!(a, seq);
        let c = impute(&d, &smc_config(&d, 2, 12)).unwrap();
        assert_ne!(a.datasets, c.datasets);
    }

    #[test]
    fn diagnostics_count_cells_and_traces() {
        let d = linear_data(30, 7);
        let out = impute(&d, &smc_config(&d, 2, 1)).unwrap();
        let v = &out.diagnostics.variables[0];
        assert_eq!(v.name, "x");
        assert_eq!(v.cells, 10 * 3 * 2);
        assert_eq!(v.accepted + v.fallbacks, v.cells);
        assert!(v.proposals >= v.accepted);
        assert!(v.acceptance_rate() > 0.0 && v.acceptance_rate() <= 1.0);
        // psi: 3 coefficients + sigma2; phi: 2 coefficients + sigma2
        assert_eq!(out.diagnostics.traces.len(), 2 * 3 * (4 + 3));
        let mut buf = Vec::new();
        out.diagnostics.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("section,imputation,sweep,variable,name,value\n"));
        assert!(text.contains("trace,2,3,x,psi:sigma2,"));
    }

    #[test]
    fn configuration_errors() {
        let d = linear_data(20, 8);
        let f = ModelFormula::parse("y ~ x + z").unwrap();
        assert!(matches!(impute(&d, &EngineConfig::fcs(2, 1, vec![])), Err(Error::Config(_))));
        let mut cfg = smc_config(&d, 0, 1);
        assert!(matches!(impute(&d, &cfg), Err(Error::Config(_))));
        cfg.m = 1;
        cfg.iterations = 0;
        assert!(matches!(impute(&d, &cfg), Err(Error::Config(_))));
        let with_y = CovariateModelSpec::parse("x ~ z + y", &d, None).unwrap();
        let cfg = EngineConfig::smcfcs(1, 1, SubstantiveFamily::Linear, f.clone(), vec![with_y.clone()]);
        assert!(matches!(impute(&d, &cfg), Err(Error::Config(_))));
        let twice = EngineConfig::fcs(1, 1, vec![with_y.clone(), with_y]);
        assert!(matches!(impute(&d, &twice), Err(Error::Config(_))));
        let mut no_subst = smc_config(&d, 1, 1);
        no_subst.substantive = None;
        assert!(matches!(impute(&d, &no_subst), Err(Error::Config(_))));
        assert!(matches!(run_fcs(&d, &smc_config(&d, 1, 1), Streams::new(1)), Err(Error::Config(_))));
    }

    #[test]
    fn rejection_and_enumeration_agree_for_binary_target() {
        let mut rng = Streams::new(21).rng();
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.4))).collect();
        let y: Vec<f64> = x.iter().map(|x| f64::from(u8::from(rng.random::<f64>() < crate::linalg::expit(-0.5 + 1.5 * x)))).collect();
        let mut xc = Column::complete("x", Binary, PartialCovariate, x);
        for r in (0..n).step_by(4) {
            xc.observed[r] = false;
        }
        let d = Dataset::new(vec![Column::complete("y", Binary, Outcome, y), xc]).unwrap();
        let f = ModelFormula::parse("y ~ x").unwrap();
        let spec = CovariateModelSpec::parse("x ~ 1", &d, None).unwrap();
        let mean_imputed = |sampler| {
            let mut cfg = EngineConfig::smcfcs(40, 5, SubstantiveFamily::Logistic, f.clone(), vec![spec.clone()]).with_iterations(2);
            cfg.binary_sampler = sampler;
            let out = impute(&d, &cfg).unwrap();
            let rows: Vec<usize> = d.column(1).missing_rows().collect();
            let total: f64 = out.datasets.iter().flat_map(|imp| rows.iter().map(move |&r| imp.value(r, 1))).sum();
            (total, (rows.len() * out.datasets.len()) as f64)
        };
        let (a, n_a) = mean_imputed(BinarySampler::Enumerate);
        let (b, n_b) = mean_imputed(BinarySampler::Rejection);
        let (pa, pb) = (a / n_a, b / n_b);
        let pooled = (a + b) / (n_a + n_b);
        let z = (pa - pb) / (pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b)).sqrt();
        assert!(z.abs() < 3.29, "z = {z}");
    }

    #[test]
    fn jav_runs_as_plain_fcs() {
        let d = linear_data(50, 9);
        let f = ModelFormula::parse("y ~ x + x^2 + z").unwrap();
        let s = jav_config(&d, &f, 2, 3, 4).unwrap();
        let out = impute(&s.dataset, &s.config).unwrap();
        let sq = s.dataset.index_of("x_sq").unwrap();
        let x = s.dataset.index_of("x").unwrap();
        let imp = &out.datasets[0];
        let row = d.column(1).missing_rows().next().unwrap();
        assert!(imp.value(row, sq).is_finite());
        assert_ne!(imp.value(row, sq), imp.value(row, x).powi(2));
    }

    #[test]
    fn cox_fcs_gets_nelson_aalen_column() {
        let mut rng = Streams::new(31).rng();
        let n = 80;
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let t: Vec<f64> = x.iter().map(|x| -rng.random::<f64>().ln() / (0.5 * x).exp() + 1e-9).collect();
        let e: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.7))).collect();
        let mut xc = Column::complete("x", Continuous, PartialCovariate, x);
        xc.observed[0] = false;
        xc.observed[5] = false;
        let d = Dataset::new(vec![
            Column::complete("t", Continuous, Time, t),
            Column::complete("d", Binary, Event, e),
            xc,
        ])
        .unwrap();
        let f = ModelFormula::parse("surv(t, d) ~ x").unwrap();
        let (specs, derived) = default_fcs_specs(&d, SubstantiveFamily::Cox, &f).unwrap();
        let mut cfg = EngineConfig::fcs(2, 3, specs);
        cfg.derived_columns = derived.clone();
        let out = impute(&d, &cfg).unwrap();
        assert_eq!(out.datasets[0].columns().len(), 3);
        let smc = EngineConfig::smcfcs(2, 3, SubstantiveFamily::Cox, f, vec![CovariateModelSpec::parse("x ~ 1", &d, None).unwrap()])
            .with_iterations(2);
        let out = impute(&d, &smc).unwrap();
        assert_eq!(out.diagnostics.fallbacks(), 0);
    }
}
