//! Conditional models `f(X_j | X_-j, Z, phi_j)` for a partially observed
//! covariate. FCS imputes from them directly; SMC-FCS uses them as the
//! rejection-sampling proposal.

use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, VariableKind, VariableRole};
use crate::error::{Error, FitError, Result};
use crate::fitters;
use crate::formula::{BoundFormula, ModelFormula, Response, Term};
use crate::linalg::expit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateFamily {
    #[serde(alias = "linear", alias = "normal_linear")]
    Normal,
    Logistic,
}

impl CovariateFamily {
    pub fn for_kind(kind: VariableKind) -> Self {
        match kind {
            VariableKind::Continuous => CovariateFamily::Normal,
            VariableKind::Binary => CovariateFamily::Logistic,
        }
    }
}

impl fmt::Display for CovariateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovariateFamily::Normal => "normal",
            CovariateFamily::Logistic => "logistic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateModelSpec {
    pub target: String,
    pub family: CovariateFamily,
    pub predictors: Vec<Term>,
    pub intercept: bool,
}

impl CovariateModelSpec {
    pub fn new(target: &str, family: CovariateFamily, predictors: Vec<Term>) -> Self {
        CovariateModelSpec { target: target.to_string(), family, predictors, intercept: true }
    }

    /// Parse `target ~ terms`; the family defaults to the target's kind.
    pub fn parse(text: &str, d: &Dataset, family: Option<CovariateFamily>) -> Result<Self> {
        let f = ModelFormula::parse(text)?;
        let Response::Single(target) = f.response else {
            return Err(Error::Config(format!("covariate model `{text}` needs a single target on the left")));
        };
        let family = match family {
            Some(f) => f,
            None => CovariateFamily::for_kind(d.column_by_name(&target)?.kind),
        };
        Ok(CovariateModelSpec { target, family, predictors: f.terms, intercept: f.intercept })
    }

    /// All other covariates at power one, intercept included.
    pub fn default_for(d: &Dataset, target: &str) -> Result<Self> {
        let col = d.column_by_name(target)?;
        let predictors = d
            .columns()
            .iter()
            .filter(|c| c.role.is_covariate() && c.name != target)
            .map(|c| Term::var(&c.name))
            .collect();
        Ok(CovariateModelSpec::new(target, CovariateFamily::for_kind(col.kind), predictors))
    }

    pub fn formula(&self) -> ModelFormula {
        ModelFormula::new(Response::Single(self.target.clone()), self.predictors.clone(), self.intercept)
    }
}

impl fmt::Display for CovariateModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.formula(), self.family)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateParams {
    pub beta: Vec<f64>,
    /// Residual variance; present for the normal family only.
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subjects {
    All,
    ObservedOnly,
}

/// A covariate model bound to a dataset layout.
#[derive(Debug, Clone)]
pub struct CovariateModel {
    pub spec: CovariateModelSpec,
    pub target: usize,
    pub bound: BoundFormula,
}

impl CovariateModel {
    pub fn new(spec: CovariateModelSpec, d: &Dataset) -> Result<Self> {
        let bound = spec.formula().bind(d)?;
        let target = d.index_of(&spec.target).ok_or_else(|| Error::UnknownColumn(spec.target.clone()))?;
        let col = d.column(target);
        if col.role != VariableRole::PartialCovariate {
            return Err(Error::Config(format!("`{}` is not a partially observed covariate", col.name)));
        }
        if bound.references(target) {
            return Err(Error::Config(format!("covariate model for `{}` uses its own target as a predictor", col.name)));
        }
        if spec.family == CovariateFamily::Logistic && col.kind != VariableKind::Binary {
            return Err(Error::Config(format!("logistic model for non-binary `{}`", col.name)));
        }
        Ok(CovariateModel { spec, target, bound })
    }

    pub fn family(&self) -> CovariateFamily {
        self.spec.family
    }

    fn rows(&self, d: &Dataset, subjects: Subjects) -> Vec<usize> {
        match subjects {
            Subjects::All => (0..d.n_rows()).collect(),
            Subjects::ObservedOnly => d.column(self.target).observed_rows().collect(),
        }
    }

    /// Fit on the selected subjects of a completed dataset and take one
    /// posterior draw of the parameters.
    pub fn fit_and_draw<R: Rng + ?Sized>(&self, d: &Dataset, subjects: Subjects, rng: &mut R) -> Result<CovariateParams, FitError> {
        let rows = self.rows(d, subjects);
        let x = self.bound.design_rows(d, &rows).map_err(|_| FitError::NonFinite)?;
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| d.value(r, self.target)));
        if y.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite);
        }
        match self.spec.family {
            CovariateFamily::Normal => {
                let fit = fitters::fit_linear(&x, &y)?;
                let (beta, sigma2) = fitters::draw_linear_posterior(&fit, rng)?;
                Ok(CovariateParams { beta: beta.iter().copied().collect(), sigma2: Some(sigma2) })
            }
            CovariateFamily::Logistic => {
                let fit = fitters::fit_logistic(&x, &y)?;
                let beta = fitters::draw_glm_posterior(&fit, rng)?;
                Ok(CovariateParams { beta: beta.iter().copied().collect(), sigma2: None })
            }
        }
    }

    /// Linear predictor of the model for subject `row`.
    #[inline]
    pub fn linear_predictor(&self, d: &Dataset, row: usize, params: &CovariateParams) -> f64 {
        self.bound.linear_predictor(d, row, &params.beta, None)
    }

    /// Draw a candidate value for subject `row`.
    pub fn sample_covariate<R: Rng + ?Sized>(&self, d: &Dataset, row: usize, params: &CovariateParams, rng: &mut R) -> f64 {
        let eta = self.linear_predictor(d, row, params);
        sample_from_eta(self.spec.family, eta, params, rng)
    }

    pub fn conditional_density(&self, d: &Dataset, row: usize, params: &CovariateParams, value: f64) -> f64 {
        let eta = self.linear_predictor(d, row, params);
        density_from_eta(self.spec.family, eta, params, value)
    }
}

#[inline]
pub fn sample_from_eta<R: Rng + ?Sized>(family: CovariateFamily, eta: f64, params: &CovariateParams, rng: &mut R) -> f64 {
    match family {
        CovariateFamily::Normal => {
            let sd = params.sigma2.unwrap_or(0.0).max(0.0).sqrt();
            eta + sd * rng.sample::<f64, _>(StandardNormal)
        }
        CovariateFamily::Logistic => f64::from(u8::from(rng.random::<f64>() < expit(eta))),
    }
}

/// Normal density or Bernoulli mass at `value`.
pub fn density_from_eta(family: CovariateFamily, eta: f64, params: &CovariateParams, value: f64) -> f64 {
    match family {
        CovariateFamily::Normal => {
            let s2 = params.sigma2.unwrap_or(0.0);
            (-(value - eta).powi(2) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
        }
        CovariateFamily::Logistic => {
            if value == 1.0 {
                expit(eta)
            } else if value == 0.0 {
                expit(-eta)
            } else {
                0.0
            }
        }
    }
}
