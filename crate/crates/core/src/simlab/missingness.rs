//! Missingness mechanisms applied to every partially observed covariate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, Dataset, VariableRole};
use crate::error::{Error, Result};
use crate::linalg::expit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// Each cell observed independently with probability `p_obs`.
    Mcar { p_obs: f64 },
    /// Observed with probability `expit(a0 + a1 * y)`, `a1 = -1 / SD(y)` and
    /// `a0` calibrated so the marginal observation rate is `target_p_obs`.
    Mar { target_p_obs: f64 },
}

fn mask_with<R: Rng + ?Sized>(d: &Dataset, rng: &mut R, p_obs: impl Fn(usize) -> f64) -> Dataset {
    let cols: Vec<Column> = d
        .columns()
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if c.role == VariableRole::PartialCovariate {
                for r in 0..c.values.len() {
                    if c.observed[r] && rng.random::<f64>() >= p_obs(r) {
                        c.observed[r] = false;
                        c.values[r] = f64::NAN;
                    }
                }
            }
            c
        })
        .collect();
    Dataset::new(cols).expect("masking keeps the dataset valid")
}

pub fn apply_mcar<R: Rng + ?Sized>(d: &Dataset, p_obs: f64, rng: &mut R) -> Dataset {
    mask_with(d, rng, |_| p_obs)
}

/// Outcome values driving MAR missingness.
pub fn outcome_values(d: &Dataset) -> Result<&[f64]> {
    d.columns()
        .iter()
        .find(|c| c.role == VariableRole::Outcome)
        .map(|c| c.values.as_slice())
        .ok_or_else(|| Error::Config("MAR missingness needs an outcome column".into()))
}

pub fn apply_mar<R: Rng + ?Sized>(d: &Dataset, alpha0: f64, alpha1: f64, rng: &mut R) -> Result<Dataset> {
    let y = outcome_values(d)?.to_vec();
    Ok(mask_with(d, rng, |r| expit(alpha0 + alpha1 * y[r])))
}

/// `-1 / SD(y)`.
pub fn mar_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    -1.0 / var.sqrt()
}

/// Intercept `a0` solving `mean(expit(a0 + a1 * y)) = target_p` by bisection.
pub fn calibrate_mar_intercept(y_sample: &[f64], alpha1: f64, target_p: f64) -> Result<f64> {
    if !(target_p > 0.0 && target_p < 1.0) {
        return Err(Error::Config(format!("target observation probability {target_p} outside (0, 1)")));
    }
    if y_sample.is_empty() {
        return Err(Error::Config("empty calibration sample".into()));
    }
    let rate = |a0: f64| y_sample.iter().map(|y| expit(a0 + alpha1 * y)).sum::<f64>() / y_sample.len() as f64;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while rate(lo) > target_p {
        lo *= 2.0;
    }
    while rate(hi) < target_p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = rate(mid);
        if (p - target_p).abs() < 1e-9 {
            return Ok(mid);
        }
        if p < target_p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use crate::simlab::dgp::{gen_interaction, gen_quadratic, CovDist, XDist};

    fn observed_fraction(d: &Dataset, col: usize) -> f64 {
        1.0 - d.column(col).n_missing() as f64 / d.n_rows() as f64
    }

    #[test]
    fn mcar_rates() {
        let mut rng = Streams::new(1).rng();
        let d = gen_interaction(CovDist::Bvnormal, 100_000, &mut rng);
        assert_eq!(apply_mcar(&d, 1.0, &mut rng).n_missing_total(), 0);
        let m = apply_mcar(&d, 0.7, &mut rng);
        assert_eq!(m.column(0).n_missing(), 0);
        for c in [1, 2] {
            assert!((observed_fraction(&m, c) - 0.7).abs() < 0.005);
        }
        let a: Vec<f64> = m.column(1).observed.iter().map(|o| f64::from(u8::from(*o))).collect();
        let b: Vec<f64> = m.column(2).observed.iter().map(|o| f64::from(u8::from(*o))).collect();
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let corr = cov / (ma * (1.0 - ma) * mb * (1.0 - mb)).sqrt();
        assert!(corr.abs() < 0.02, "{corr}");
    }

    #[test]
    fn intercept_closed_forms() {
        let y = vec![0.3, -1.0, 2.0];
        assert!((calibrate_mar_intercept(&y, 0.0, 0.7).unwrap() - (7.0f64 / 3.0).ln()).abs() < 1e-6);
        assert!(calibrate_mar_intercept(&y, 0.0, 0.5).unwrap().abs() < 1e-6);
        assert!(calibrate_mar_intercept(&y, 0.0, 1.0).is_err());
        assert!(calibrate_mar_intercept(&y, 0.0, 0.0).is_err());
    }

    #[test]
    fn calibrated_mar_rate_on_fresh_data() {
        let calib = gen_quadratic(XDist::Normal, 200_000, &mut Streams::new(2).rng());
        let y = outcome_values(&calib).unwrap();
        let a1 = mar_slope(y);
        let a0 = calibrate_mar_intercept(y, a1, 0.7).unwrap();
        let fresh = gen_quadratic(XDist::Normal, 200_000, &mut Streams::new(3).rng());
        let mut rng = Streams::new(4).rng();
        let m = apply_mar(&fresh, a0, a1, &mut rng).unwrap();
        assert!((observed_fraction(&m, 1) - 0.7).abs() < 0.005);

        // Observation rate decreases across outcome deciles.
        let mut rows: Vec<usize> = (0..m.n_rows()).collect();
        rows.sort_by(|&a, &b| m.value(a, 0).total_cmp(&m.value(b, 0)));
        let rates: Vec<f64> = rows
            .chunks(rows.len() / 10)
            .map(|ch| ch.iter().filter(|&&r| m.column(1).observed[r]).count() as f64 / ch.len() as f64)
            .collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]), "{rates:?}");

        assert_eq!(apply_mar(&fresh, 60.0, 0.0, &mut rng).unwrap().n_missing_total(), 0);
    }
}
