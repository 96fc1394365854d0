//! Substantive (analysis) models: posterior draws of their parameters and
//! the rejection-sampling acceptance ratios `f(Y | X, psi) / bound`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, FitError, Result};
use crate::fitters::{self, StepCumHazard};
use crate::formula::{BoundFormula, BoundResponse, ModelFormula};
use crate::linalg::expit;

/// Slack allowed above 1 for the event-case ratio, which reaches its bound
/// exactly at the maximizer.
pub const RATIO_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstantiveFamily {
    #[serde(alias = "normal_linear", alias = "normal")]
    Linear,
    Logistic,
    Cox,
}

impl fmt::Display for SubstantiveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubstantiveFamily::Linear => "linear",
            SubstantiveFamily::Logistic => "logistic",
            SubstantiveFamily::Cox => "cox",
        })
    }
}

impl FromStr for SubstantiveFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "normal" | "normal_linear" => Ok(SubstantiveFamily::Linear),
            "logistic" => Ok(SubstantiveFamily::Logistic),
            "cox" => Ok(SubstantiveFamily::Cox),
            other => Err(Error::Config(format!("unknown family `{other}` (expected linear, logistic or cox)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extras {
    None,
    Sigma2(f64),
    Baseline(StepCumHazard),
}

/// A draw of the substantive-model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstantiveParams {
    pub beta: Vec<f64>,
    pub extras: Extras,
}

impl SubstantiveParams {
    pub fn normal(beta: Vec<f64>, sigma2: f64) -> Self {
        SubstantiveParams { beta, extras: Extras::Sigma2(sigma2) }
    }

    pub fn logistic(beta: Vec<f64>) -> Self {
        SubstantiveParams { beta, extras: Extras::None }
    }

    pub fn cox(beta: Vec<f64>, baseline: StepCumHazard) -> Self {
        SubstantiveParams { beta, extras: Extras::Baseline(baseline) }
    }

    pub fn linear_predictor(&self, design_row: &[f64]) -> f64 {
        design_row.iter().zip(&self.beta).map(|(x, b)| x * b).sum()
    }
}

/// `f(outcome | candidate covariates, psi)` divided by its bound over the
/// candidate; always in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AcceptanceRatio(pub f64);

impl AcceptanceRatio {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn ratio_normal_eta(y: f64, eta: f64, sigma2: f64) -> f64 {
    (-(y - eta).powi(2) / (2.0 * sigma2)).exp()
}

pub fn ratio_logistic_eta(y: f64, eta: f64) -> f64 {
    if y == 1.0 {
        expit(eta)
    } else {
        expit(-eta)
    }
}

pub fn ratio_cox_censored_eta(cum_hazard: f64, eta: f64) -> f64 {
    if cum_hazard == 0.0 {
        return 1.0;
    }
    (-cum_hazard * eta.exp()).exp()
}

pub fn ratio_cox_event_eta(cum_hazard: f64, eta: f64) -> Result<f64> {
    if cum_hazard.is_nan() || cum_hazard <= 0.0 {
        return Err(Error::Model("event at a time with zero cumulative baseline hazard".into()));
    }
    let v = (1.0 + eta - cum_hazard * eta.exp()).exp() * cum_hazard;
    debug_assert!(v <= 1.0 + RATIO_SLACK || !v.is_finite(), "event-case ratio {v} exceeds its bound");
    Ok(if v.is_finite() { v } else { 0.0 })
}

fn sigma2_of(params: &SubstantiveParams) -> Result<f64> {
    match params.extras {
        Extras::Sigma2(s) if s > 0.0 => Ok(s),
        _ => Err(Error::Model("normal substantive model needs a positive residual variance".into())),
    }
}

fn baseline_of(params: &SubstantiveParams) -> Result<&StepCumHazard> {
    match &params.extras {
        Extras::Baseline(b) => Ok(b),
        _ => Err(Error::Model("cox substantive model needs a baseline cumulative hazard".into())),
    }
}

pub fn acceptance_ratio_normal(y: f64, design_row: &[f64], params: &SubstantiveParams) -> Result<AcceptanceRatio> {
    Ok(AcceptanceRatio(ratio_normal_eta(y, params.linear_predictor(design_row), sigma2_of(params)?)))
}

pub fn acceptance_ratio_discrete(y: f64, design_row: &[f64], params: &SubstantiveParams) -> Result<AcceptanceRatio> {
    if y != 0.0 && y != 1.0 {
        return Err(Error::Model(format!("logistic outcome must be 0 or 1, got {y}")));
    }
    Ok(AcceptanceRatio(ratio_logistic_eta(y, params.linear_predictor(design_row))))
}

pub fn acceptance_ratio_cox_censored(t: f64, design_row: &[f64], params: &SubstantiveParams) -> Result<AcceptanceRatio> {
    let h = baseline_of(params)?.eval(t);
    Ok(AcceptanceRatio(ratio_cox_censored_eta(h, params.linear_predictor(design_row))))
}

pub fn acceptance_ratio_cox_event(t: f64, design_row: &[f64], params: &SubstantiveParams) -> Result<AcceptanceRatio> {
    let h = baseline_of(params)?.eval(t);
    Ok(AcceptanceRatio(ratio_cox_event_eta(h, params.linear_predictor(design_row))?))
}

/// Per-dataset estimates with their sampling variances.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub estimates: Vec<f64>,
    pub variances: Vec<f64>,
}

/// A substantive model bound to a dataset layout.
#[derive(Debug, Clone)]
pub struct SubstantiveModel {
    pub family: SubstantiveFamily,
    pub formula: ModelFormula,
    pub bound: BoundFormula,
}

impl SubstantiveModel {
    pub fn new(family: SubstantiveFamily, formula: ModelFormula, d: &Dataset) -> Result<Self> {
        if formula.is_survival() != (family == SubstantiveFamily::Cox) {
            return Err(Error::Config(format!(
                "family {family} does not match response `{}` (survival responses go with cox)",
                formula.response
            )));
        }
        let bound = formula.bind(d)?;
        for t in &bound.terms {
            for &(c, _) in t {
                if !d.column(c).role.is_covariate() {
                    return Err(Error::Config(format!(
                        "substantive model term uses `{}`, which is not a covariate",
                        d.column(c).name
                    )));
                }
            }
        }
        match bound.response {
            BoundResponse::Single(y) => {
                if d.column(y).role.allows_missing() {
                    return Err(Error::Config(format!("outcome `{}` must be fully observed", d.column(y).name)));
                }
            }
            BoundResponse::Survival { time, event } => {
                use crate::dataset::VariableRole::*;
                if d.column(time).role != Time || d.column(event).role != Event {
                    return Err(Error::Config("survival response must pair a time column with an event column".into()));
                }
            }
        }
        if family == SubstantiveFamily::Logistic {
            let BoundResponse::Single(y) = bound.response else { unreachable!() };
            if d.column(y).kind != crate::dataset::VariableKind::Binary {
                return Err(Error::Config(format!("logistic outcome `{}` must be binary", d.column(y).name)));
            }
        }
        Ok(SubstantiveModel { family, formula, bound })
    }

    fn survival_vectors(&self, d: &Dataset, rows: &[usize]) -> (Vec<f64>, Vec<bool>) {
        let BoundResponse::Survival { time, event } = self.bound.response else { unreachable!() };
        (
            rows.iter().map(|&r| d.value(r, time)).collect(),
            rows.iter().map(|&r| d.value(r, event) == 1.0).collect(),
        )
    }

    /// Draw psi from its (approximate) posterior given a completed dataset.
    pub fn draw_posterior<R: Rng + ?Sized>(&self, d: &Dataset, rng: &mut R) -> Result<SubstantiveParams> {
        let rows: Vec<usize> = (0..d.n_rows()).collect();
        let x = self.bound.design_rows(d, &rows)?;
        match self.family {
            SubstantiveFamily::Linear => {
                let y = self.bound.response_vector(d, &rows)?;
                let fit = fitters::fit_linear(&x, &y)?;
                let (beta, sigma2) = fitters::draw_linear_posterior(&fit, rng)?;
                Ok(SubstantiveParams::normal(beta.iter().copied().collect(), sigma2))
            }
            SubstantiveFamily::Logistic => {
                let y = self.bound.response_vector(d, &rows)?;
                let fit = fitters::fit_logistic(&x, &y)?;
                let beta = fitters::draw_glm_posterior(&fit, rng)?;
                Ok(SubstantiveParams::logistic(beta.iter().copied().collect()))
            }
            SubstantiveFamily::Cox => {
                let (time, event) = self.survival_vectors(d, &rows);
                let fit = fitters::fit_cox(&x, &time, &event)?;
                let (beta, baseline) = fitters::draw_cox_posterior(&fit, &x, &time, &event, rng)?;
                Ok(SubstantiveParams::cox(beta.iter().copied().collect(), baseline))
            }
        }
    }

    /// Maximum-likelihood fit on `rows`; non-converged fits are errors.
    pub fn fit_rows(&self, d: &Dataset, rows: &[usize]) -> Result<FitSummary, FitError> {
        let x = self.bound.design_rows(d, rows).map_err(|_| FitError::NonFinite)?;
        let (estimates, variances): (DVector<f64>, Vec<f64>) = match self.family {
            SubstantiveFamily::Linear => {
                let y = self.bound.response_vector(d, rows).map_err(|_| FitError::NonFinite)?;
                let fit = fitters::fit_linear(&x, &y)?;
                let v = fit.coefficient_variances();
                (fit.beta, v)
            }
            SubstantiveFamily::Logistic => {
                let y = self.bound.response_vector(d, rows).map_err(|_| FitError::NonFinite)?;
                let fit = fitters::fit_logistic(&x, &y)?;
                if !fit.converged {
                    return Err(FitError::NonConverged);
                }
                let v = fit.coefficient_variances();
                (fit.beta, v)
            }
            SubstantiveFamily::Cox => {
                let (time, event) = self.survival_vectors(d, rows);
                let fit = fitters::fit_cox(&x, &time, &event)?;
                if !fit.converged {
                    return Err(FitError::NonConverged);
                }
                let v = fit.coefficient_variances();
                (fit.beta, v)
            }
        };
        Ok(FitSummary { estimates: estimates.iter().copied().collect(), variances })
    }

    pub fn fit(&self, d: &Dataset) -> Result<FitSummary, FitError> {
        let rows: Vec<usize> = (0..d.n_rows()).collect();
        self.fit_rows(d, &rows)
    }

    /// Acceptance ratio for subject `row` with column `col` set to `value`.
    #[inline]
    pub fn acceptance(&self, d: &Dataset, row: usize, params: &SubstantiveParams, col: usize, value: f64) -> Result<f64> {
        let eta = self.bound.linear_predictor(d, row, &params.beta, Some((col, value)));
        self.acceptance_eta(d, row, params, eta)
    }

    #[inline]
    pub fn acceptance_eta(&self, d: &Dataset, row: usize, params: &SubstantiveParams, eta: f64) -> Result<f64> {
        match (self.family, self.bound.response) {
            (SubstantiveFamily::Linear, BoundResponse::Single(y)) => {
                Ok(ratio_normal_eta(d.value(row, y), eta, sigma2_of(params)?))
            }
            (SubstantiveFamily::Logistic, BoundResponse::Single(y)) => Ok(ratio_logistic_eta(d.value(row, y), eta)),
            (SubstantiveFamily::Cox, BoundResponse::Survival { time, event }) => {
                let h = baseline_of(params)?.eval(d.value(row, time));
                if d.value(row, event) == 1.0 {
                    ratio_cox_event_eta(h, eta)
                } else {
                    Ok(ratio_cox_censored_eta(h, eta))
                }
            }
            _ => Err(Error::Model("family and response kind disagree".into())),
        }
    }
}
