use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::error::FitError;
use crate::linalg;

/// Least-squares fit of a normal linear model.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub beta: DVector<f64>,
    /// SSE / (n - k).
    pub sigma2: f64,
    pub sse: f64,
    pub xtx_inverse: DMatrix<f64>,
    pub n: usize,
    pub k: usize,
    xtx_inverse_factor: DMatrix<f64>,
}

impl LinearFit {
    /// Sampling variances of the coefficients, `sigma2 * diag((X'X)^-1)`.
    pub fn coefficient_variances(&self) -> Vec<f64> {
        self.xtx_inverse.diagonal().iter().map(|v| v * self.sigma2).collect()
    }
}

pub fn fit_linear(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearFit, FitError> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(FitError::TooFewRows { n, k });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let xt = x.transpose();
    let chol = linalg::cholesky(&(&xt * x))?;
    let beta = chol.solve(&(&xt * y));
    let resid = y - x * &beta;
    let sse = resid.norm_squared();
    let xtx_inverse = linalg::symmetrize(&chol.inverse());
    let xtx_inverse_factor = linalg::covariance_factor(&xtx_inverse)?;
    Ok(LinearFit { beta, sigma2: sse / (n - k) as f64, sse, xtx_inverse, n, k, xtx_inverse_factor })
}

/// Draw `(beta, sigma2)` from the posterior under the prior `p(beta, sigma2) ∝ 1/sigma2`.
pub fn draw_linear_posterior<R: Rng + ?Sized>(fit: &LinearFit, rng: &mut R) -> Result<(DVector<f64>, f64), FitError> {
    if fit.n <= fit.k {
        return Err(FitError::TooFewRows { n: fit.n, k: fit.k });
    }
    let chi = ChiSquared::new((fit.n - fit.k) as f64).map_err(|e| FitError::Invalid(e.to_string()))?;
    let sigma2 = fit.sse / chi.sample(rng);
    let beta = linalg::mvn_draw(&fit.beta, &(&fit.xtx_inverse_factor * sigma2.sqrt()), rng);
    Ok((beta, sigma2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn line(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), 2, |r, c| if c == 0 { 1.0 } else { xs[r] })
    }

    #[test]
    fn perfect_fit() {
        let fit = fit_linear(&line(&[0.0, 1.0, 2.0]), &DVector::from_vec(vec![0.0, 1.0, 2.0])).unwrap();
        assert!(fit.beta[0].abs() < 1e-12 && (fit.beta[1] - 1.0).abs() < 1e-12);
        assert!(fit.sigma2 < 1e-24);
    }

    #[test]
    fn intercept_only_constant() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let fit = fit_linear(&x, &DVector::from_element(4, 2.5)).unwrap();
        assert!((fit.beta[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn three_point_normal_equations() {
        // X'X = [[3,3],[3,5]], X'y = [8,11] -> beta = (7/6, 3/2)
        let fit = fit_linear(&line(&[0.0, 1.0, 2.0]), &DVector::from_vec(vec![1.0, 3.0, 4.0])).unwrap();
        assert!((fit.beta[0] - 7.0 / 6.0).abs() < 1e-12);
        assert!((fit.beta[1] - 1.5).abs() < 1e-12);
        // residuals (-1/6, 1/3, -1/6): SSE = 1/6, n - k = 1
        assert!((fit.sigma2 - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(fit_linear(&x, &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap_err(), FitError::Singular);
        let x = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(fit_linear(&x, &DVector::from_vec(vec![1.0])), Err(FitError::TooFewRows { .. })));
    }

    #[test]
    fn degenerate_posterior() {
        let fit = fit_linear(&line(&[0.0, 1.0, 2.0, 3.0]), &DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0])).unwrap();
        let fit = LinearFit { sse: 0.0, sigma2: 0.0, ..fit };
        let (b, s2) = draw_linear_posterior(&fit, &mut Streams::new(1).rng()).unwrap();
        assert_eq!(s2, 0.0);
        assert_eq!(b, fit.beta);
    }

    #[test]
    fn posterior_moments() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| 1.0 + 2.0 * x + [0.3, -0.5, 0.1, 0.4][i % 4]).collect();
        let fit = fit_linear(&line(&xs), &DVector::from_vec(ys)).unwrap();
        let mut rng = Streams::new(42).rng();
        let draws: Vec<_> = (0..10_000).map(|_| draw_linear_posterior(&fit, &mut rng).unwrap()).collect();
        let m = draws.len() as f64;
        let nu = (fit.n - fit.k) as f64;
        // marginal posterior of beta_j is t_nu scaled by sqrt(sigma2 * (X'X)^-1_jj)
        for j in 0..2 {
            let mean = draws.iter().map(|d| d.0[j]).sum::<f64>() / m;
            let sd = (fit.sigma2 * fit.xtx_inverse[(j, j)] * nu / (nu - 2.0)).sqrt();
            assert!((mean - fit.beta[j]).abs() < 3.0 * sd / m.sqrt(), "beta {j}");
        }
        // E[SSE / chi2_nu] = SSE / (nu - 2)
        let s2_mean = draws.iter().map(|d| d.1).sum::<f64>() / m;
        let target = fit.sse / (nu - 2.0);
        let sd = target * (2.0 / (nu - 4.0)).sqrt();
        assert!((s2_mean - target).abs() < 3.0 * sd / m.sqrt(), "{s2_mean} vs {target}");
    }
}
