//! Small dense kernels on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::FitError;

/// Smallest acceptable ratio between the smallest and largest Cholesky
/// pivots before a matrix is treated as singular.
const PIVOT_RATIO: f64 = 1e-9;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factorization with a rank check on the pivots.
pub fn cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, FitError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let chol = Cholesky::new(symmetrize(a)).ok_or(FitError::Singular)?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if diag.is_empty() || max == 0.0 || min / max < PIVOT_RATIO {
        return Err(FitError::Singular);
    }
    Ok(chol)
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, FitError> {
    Ok(symmetrize(&cholesky(a)?.inverse()))
}

pub fn chol_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, FitError> {
    Ok(cholesky(a)?.solve(b))
}

/// Lower Cholesky factor of a covariance matrix. A zero matrix yields a zero
/// factor so degenerate posteriors collapse onto their mean.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, FitError> {
    if cov.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(cov.nrows(), cov.ncols()));
    }
    Ok(Cholesky::new(symmetrize(cov)).ok_or(FitError::Singular)?.l())
}

/// `mean + factor * z` with `z` standard normal.
pub fn mvn_draw<R: Rng + ?Sized>(mean: &DVector<f64>, factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    mean + factor * z
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Sample standard deviation of each column; zero for constant columns.
pub fn column_sds(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            if x.nrows() < 2 {
                return 0.0;
            }
            let m = c.sum() / n;
            (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_symmetry_and_extremes() {
        assert_eq!(expit(0.0), 0.5);
        assert!((expit(3f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(expit(800.0), 1.0);
        assert_eq!(expit(-800.0), 0.0);
        assert!((log1pexp(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log1pexp(1000.0), 1000.0);
    }

    #[test]
    fn singular_detected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(cholesky(&a).unwrap_err(), FitError::Singular);
        let b = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let inv = spd_inverse(&b).unwrap();
        assert!(((&b * inv) - DMatrix::identity(2, 2)).norm() < 1e-12);
    }
}
