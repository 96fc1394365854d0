use rand::seq::IndexedRandom;
use rand::Rng;

use super::diagnostics::{Diagnostics, TraceBlock, TraceRow};
use super::{BinarySampler, Method, Prepared};
use crate::covariate::{CovariateFamily, CovariateModel, CovariateParams, Subjects};
use crate::dataset::Dataset;
use crate::error::{Error, FitError, Result};
use crate::rng::{stage, Streams};
use crate::substantive::{Extras, SubstantiveModel, SubstantiveParams};

pub(crate) enum ChainError {
    /// Retryable with a fresh initialization.
    Fit(FitError),
    Fatal(Error),
}

impl From<Error> for ChainError {
    fn from(e: Error) -> Self {
        match e {
            Error::Fit(f) => ChainError::Fit(f),
            other => ChainError::Fatal(other),
        }
    }
}

impl From<FitError> for ChainError {
    fn from(e: FitError) -> Self {
        ChainError::Fit(e)
    }
}

/// Fill every missing cell with a value drawn uniformly, with replacement,
/// from the observed values of the same column.
pub fn initialize<R: Rng + ?Sized>(d: &Dataset, rng: &mut R) -> Result<Dataset> {
    let mut out = d.clone();
    for (c, col) in d.columns().iter().enumerate() {
        if col.n_missing() == 0 {
            continue;
        }
        let pool: Vec<f64> = col.observed_rows().map(|r| col.values[r]).collect();
        if pool.is_empty() {
            return Err(Error::Config(format!("column `{}` has no observed values", col.name)));
        }
        for r in col.missing_rows() {
            out.set_imputed(r, c, *pool.choose(rng).expect("non-empty"));
        }
    }
    Ok(out)
}

/// Outcome of imputing one cell by rejection sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDraw {
    pub value: f64,
    pub proposals: usize,
    /// False when the cap was hit and the best candidate was kept.
    pub accepted: bool,
}

/// Impute `row` of the target of `cov` from the density proportional to
/// `f(outcome | x, psi) f(x | phi)` by proposing from the covariate model.
#[allow(clippy::too_many_arguments)]
pub fn impute_cell_rejection<R: Rng + ?Sized>(
    subst: &SubstantiveModel,
    psi: &SubstantiveParams,
    cov: &CovariateModel,
    phi: &CovariateParams,
    d: &Dataset,
    row: usize,
    max_rejections: usize,
    rng: &mut R,
) -> Result<CellDraw> {
    let eta = cov.linear_predictor(d, row, phi);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for k in 1..=max_rejections {
        let cand = crate::covariate::sample_from_eta(cov.family(), eta, phi, rng);
        let ratio = subst.acceptance(d, row, psi, cov.target, cand)?;
        if rng.random::<f64>() < ratio {
            return Ok(CellDraw { value: cand, proposals: k, accepted: true });
        }
        if ratio > best.0 {
            best = (ratio, cand);
        }
    }
    Ok(CellDraw { value: best.1, proposals: max_rejections, accepted: false })
}

/// Probability that a binary target equals one under the target density,
/// by enumerating both values.
pub fn binary_probability(
    subst: &SubstantiveModel,
    psi: &SubstantiveParams,
    cov: &CovariateModel,
    phi: &CovariateParams,
    d: &Dataset,
    row: usize,
) -> Result<f64> {
    let p1 = subst.acceptance(d, row, psi, cov.target, 1.0)? * cov.conditional_density(d, row, phi, 1.0);
    let p0 = subst.acceptance(d, row, psi, cov.target, 0.0)? * cov.conditional_density(d, row, phi, 0.0);
    let total = p0 + p1;
    if total.is_nan() || total <= 0.0 || !total.is_finite() {
        return Err(Error::Fit(FitError::NonFinite));
    }
    Ok(p1 / total)
}

#[allow(clippy::too_many_arguments)]
fn trace(
    diag: &mut Diagnostics,
    imputation: usize,
    sweep: usize,
    variable: &str,
    block: TraceBlock,
    names: &[String],
    beta: &[f64],
    sigma2: Option<f64>,
) {
    let named = names.iter().zip(beta).map(|(n, v)| (n.clone(), *v));
    let rows: Vec<(String, f64)> = named.chain(sigma2.map(|s| ("sigma2".to_string(), s))).collect();
    for (name, value) in rows {
        diag.traces.push(TraceRow { imputation: imputation + 1, sweep, variable: variable.to_string(), block, name, value });
    }
}

pub(crate) fn run_chain(p: &Prepared, m: usize, streams: Streams) -> Result<(Dataset, Diagnostics), ChainError> {
    let mut diag = Diagnostics::new(p);
    let mut data = initialize(&p.data, &mut streams.child(stage::INIT).rng())?;
    let mut rng = streams.child(stage::SWEEP).rng();
    let psi_names = p.substantive.as_ref().map(|s| s.formula.labels()).unwrap_or_default();
    for sweep in 1..=p.iterations {
        for (j, cov) in p.models.iter().enumerate() {
            let target = &cov.spec.target;
            let rows: Vec<usize> = data.column(cov.target).missing_rows().collect();
            match (p.method, &p.substantive) {
                (Method::Fcs, _) | (Method::Smcfcs, None) => {
                    let phi = cov.fit_and_draw(&data, Subjects::ObservedOnly, &mut rng)?;
                    if p.record_traces {
                        trace(&mut diag, m, sweep, target, TraceBlock::Phi, &cov.spec.formula().labels(), &phi.beta, phi.sigma2);
                    }
                    for &r in &rows {
                        let v = cov.sample_covariate(&data, r, &phi, &mut rng);
                        data.set_imputed(r, cov.target, v);
                    }
                }
                (Method::Smcfcs, Some(subst)) => {
                    let psi = subst.draw_posterior(&data, &mut rng)?;
                    let phi = cov.fit_and_draw(&data, Subjects::All, &mut rng)?;
                    if p.record_traces {
                        let s2 = match psi.extras {
                            Extras::Sigma2(s) => Some(s),
                            _ => None,
                        };
                        trace(&mut diag, m, sweep, target, TraceBlock::Psi, &psi_names, &psi.beta, s2);
                        trace(&mut diag, m, sweep, target, TraceBlock::Phi, &cov.spec.formula().labels(), &phi.beta, phi.sigma2);
                    }
                    let vd = &mut diag.variables[j];
                    let enumerate = cov.family() == CovariateFamily::Logistic && p.binary_sampler == BinarySampler::Enumerate;
                    for &r in &rows {
                        let v = if enumerate {
                            let p1 = binary_probability(subst, &psi, cov, &phi, &data, r)?;
                            f64::from(u8::from(rng.random::<f64>() < p1))
                        } else {
                            let draw = impute_cell_rejection(subst, &psi, cov, &phi, &data, r, p.max_rejections, &mut rng)?;
                            vd.proposals += draw.proposals as u64;
                            if draw.accepted {
                                vd.accepted += 1;
                            } else {
                                vd.fallbacks += 1;
                            }
                            draw.value
                        };
                        data.set_imputed(r, cov.target, v);
                    }
                }
            }
            diag.variables[j].cells += rows.len() as u64;
        }
    }
    Ok((data, diag))
}
