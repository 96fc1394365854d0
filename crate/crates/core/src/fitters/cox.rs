use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::hazard::{breslow_from_eta, StepCumHazard};
use super::newton::{self, Evaluation};
use crate::error::FitError;
use crate::linalg;

/// Cox proportional-hazards fit with its Breslow baseline.
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub beta: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub baseline: StepCumHazard,
    pub converged: bool,
    pub iterations: usize,
}

impl CoxFit {
    pub fn coefficient_variances(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().copied().collect()
    }
}

/// Survival data sorted once for repeated partial-likelihood evaluation.
struct RiskSets<'a> {
    x: &'a DMatrix<f64>,
    event: &'a [bool],
    /// Subjects by decreasing time.
    order: Vec<usize>,
    /// `[start, end)` ranges of `order` sharing one time.
    groups: Vec<(usize, usize)>,
}

impl<'a> RiskSets<'a> {
    fn new(x: &'a DMatrix<f64>, time: &[f64], event: &'a [bool]) -> Self {
        let n = time.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
        let mut groups = Vec::new();
        let mut i = 0;
        while i < n {
            let start = i;
            let t = time[order[i]];
            while i < n && time[order[i]] == t {
                i += 1;
            }
            groups.push((start, i));
        }
        RiskSets { x, event, order, groups }
    }

    /// Breslow-tie partial log-likelihood, score and observed information.
    fn evaluate(&self, beta: &DVector<f64>) -> Evaluation {
        let k = beta.len();
        let eta = self.x * beta;
        let shift = eta.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let shift = if shift.is_finite() { shift } else { 0.0 };
        let mut s0 = 0.0;
        let mut s1 = DVector::<f64>::zeros(k);
        let mut s2 = DMatrix::<f64>::zeros(k, k);
        let mut loglik = 0.0;
        let mut score = DVector::zeros(k);
        let mut information = DMatrix::zeros(k, k);
        for &(start, end) in &self.groups {
            let mut d = 0usize;
            for &i in &self.order[start..end] {
                let w = (eta[i] - shift).exp();
                let row = self.x.row(i);
                s0 += w;
                for a in 0..k {
                    s1[a] += w * row[a];
                    for b in 0..=a {
                        s2[(a, b)] += w * row[a] * row[b];
                    }
                }
                if self.event[i] {
                    d += 1;
                    loglik += eta[i];
                    for a in 0..k {
                        score[a] += row[a];
                    }
                }
            }
            if d == 0 {
                continue;
            }
            let df = d as f64;
            loglik -= df * (s0.ln() + shift);
            for a in 0..k {
                let ma = s1[a] / s0;
                score[a] -= df * ma;
                for b in 0..=a {
                    information[(a, b)] += df * (s2[(a, b)] / s0 - ma * s1[b] / s0);
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
}

fn check(x: &DMatrix<f64>, time: &[f64], event: &[bool]) -> Result<(), FitError> {
    let n = x.nrows();
    if time.len() != n || event.len() != n {
        return Err(FitError::Invalid("design, time and event lengths differ".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    if time.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(FitError::Invalid("times must be positive and finite".into()));
    }
    if !event.iter().any(|e| *e) {
        return Err(FitError::NoEvents);
    }
    Ok(())
}

pub fn cox_loglik(x: &DMatrix<f64>, time: &[f64], event: &[bool], beta: &DVector<f64>) -> f64 {
    RiskSets::new(x, time, event).evaluate(beta).loglik
}

pub fn cox_score(x: &DMatrix<f64>, time: &[f64], event: &[bool], beta: &DVector<f64>) -> DVector<f64> {
    RiskSets::new(x, time, event).evaluate(beta).score
}

pub fn breslow_baseline(x: &DMatrix<f64>, time: &[f64], event: &[bool], beta: &DVector<f64>) -> Result<StepCumHazard, FitError> {
    let eta = x * beta;
    breslow_from_eta(time, event, eta.as_slice())
}

/// Newton-Raphson on the Breslow partial likelihood. Divergent or stalled
/// fits (monotone likelihood) come back with `converged == false`.
pub fn fit_cox(x: &DMatrix<f64>, time: &[f64], event: &[bool]) -> Result<CoxFit, FitError> {
    check(x, time, event)?;
    let k = x.ncols();
    let sets = RiskSets::new(x, time, event);
    let scales = linalg::column_sds(x);
    let out = newton::maximize(DVector::zeros(k), &scales, |b| sets.evaluate(b))?;
    let mut converged = out.converged;
    let covariance = if converged {
        match linalg::spd_inverse(&out.information) {
            Ok(c) => c,
            Err(_) => {
                converged = false;
                DMatrix::zeros(k, k)
            }
        }
    } else {
        DMatrix::zeros(k, k)
    };
    let baseline = breslow_baseline(x, time, event, &out.beta)?;
    Ok(CoxFit { beta: out.beta, covariance, baseline, converged, iterations: out.iterations })
}

/// Draw `beta* ~ N(beta_hat, covariance)` and re-estimate the baseline at
/// `beta*` with the Breslow estimator.
pub fn draw_cox_posterior<R: Rng + ?Sized>(
    fit: &CoxFit,
    x: &DMatrix<f64>,
    time: &[f64],
    event: &[bool],
    rng: &mut R,
) -> Result<(DVector<f64>, StepCumHazard), FitError> {
    if !fit.converged {
        return Err(FitError::NonConverged);
    }
    let factor = linalg::covariance_factor(&fit.covariance)?;
    let beta = linalg::mvn_draw(&fit.beta, &factor, rng);
    let baseline = breslow_baseline(x, time, event, &beta)?;
    Ok((beta, baseline))
}
