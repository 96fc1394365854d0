use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::newton::{self, Evaluation};
use crate::error::FitError;
use crate::linalg::{self, expit, log1pexp};

/// Maximum-likelihood fit of a generalized linear model.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub beta: DVector<f64>,
    /// Inverse observed information at `beta`.
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl GlmFit {
    pub fn coefficient_variances(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().copied().collect()
    }
}

pub fn logistic_loglik(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter().zip(y.iter()).map(|(e, yi)| yi * e - log1pexp(*e)).sum()
}

pub fn logistic_score(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let eta = x * beta;
    let resid = DVector::from_iterator(y.len(), eta.iter().zip(y.iter()).map(|(e, yi)| yi - expit(*e)));
    x.transpose() * resid
}

fn evaluate(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> Evaluation {
    let (n, k) = x.shape();
    let eta = x * beta;
    let mut loglik = 0.0;
    let mut score = DVector::zeros(k);
    let mut information = DMatrix::zeros(k, k);
    for i in 0..n {
        let e = eta[i];
        let p = expit(e);
        loglik += y[i] * e - log1pexp(e);
        let w = p * (1.0 - p);
        let row = x.row(i);
        for a in 0..k {
            score[a] += (y[i] - p) * row[a];
            for b in 0..=a {
                information[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            information[(b, a)] = information[(a, b)];
        }
    }
    Evaluation { loglik, score, information }
}

/// Newton-Raphson logistic regression. Separation shows up as a fit with
/// `converged == false`; rank deficiency is an error.
pub fn fit_logistic(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<GlmFit, FitError> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(FitError::Invalid(format!("{} responses for {n} rows", y.len())));
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(FitError::Invalid("logistic response must be 0/1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    if n <= k {
        return Err(FitError::TooFewRows { n, k });
    }
    let scales = linalg::column_sds(x);
    let ones = y.iter().filter(|v| **v == 1.0).count();
    if ones == 0 || ones == n {
        // The likelihood has no interior maximum; check rank before reporting.
        linalg::cholesky(&(x.transpose() * x))?;
        return Ok(GlmFit {
            beta: DVector::zeros(k),
            covariance: DMatrix::zeros(k, k),
            converged: false,
            iterations: 0,
        });
    }
    let out = newton::maximize(DVector::zeros(k), &scales, |b| evaluate(x, y, b))?;
    let covariance = if out.converged {
        match linalg::spd_inverse(&out.information) {
            Ok(c) => c,
            Err(_) => return Ok(GlmFit { beta: out.beta, covariance: DMatrix::zeros(k, k), converged: false, iterations: out.iterations }),
        }
    } else {
        DMatrix::zeros(k, k)
    };
    Ok(GlmFit { beta: out.beta, covariance, converged: out.converged, iterations: out.iterations })
}

/// Asymptotic-normal posterior draw: `N(beta_hat, covariance)`.
pub fn draw_glm_posterior<R: Rng + ?Sized>(fit: &GlmFit, rng: &mut R) -> Result<DVector<f64>, FitError> {
    if !fit.converged {
        return Err(FitError::NonConverged);
    }
    let factor = linalg::covariance_factor(&fit.covariance)?;
    Ok(linalg::mvn_draw(&fit.beta, &factor, rng))
}
