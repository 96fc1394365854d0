//! Rubin's rules for combining estimates across imputed datasets.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::dataset::{format_value, Dataset};
use crate::error::{Error, Result};
use crate::formula::ModelFormula;
use crate::parallel;
use crate::substantive::{FitSummary, SubstantiveFamily, SubstantiveModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledEstimate {
    pub point: f64,
    pub within_var: f64,
    pub between_var: f64,
    pub total_var: f64,
    /// Infinite when the between-imputation variance is zero.
    pub df: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

impl PooledEstimate {
    pub fn std_error(&self) -> f64 {
        self.total_var.sqrt()
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Fit the substantive model to every dataset. Fails if any fit fails.
pub fn fit_each(datasets: &[Dataset], family: SubstantiveFamily, formula: &ModelFormula) -> Result<Vec<FitSummary>> {
    let first = datasets.first().ok_or_else(|| Error::Pooling("no datasets to fit".into()))?;
    let model = SubstantiveModel::new(family, formula.clone(), first)?;
    parallel::map_indexed(datasets.len(), |m| {
        model.fit(&datasets[m]).map_err(|e| Error::Pooling(format!("fit failed on imputation {}: {e}", m + 1)))
    })
    .into_iter()
    .collect()
}

const T_DF_LIMIT: f64 = 1e7;

/// Combine one scalar parameter.
pub fn pool_scalar(estimates: &[f64], variances: &[f64], level: f64) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::Pooling(format!("pooling needs at least 2 imputations, got {m}")));
    }
    if variances.len() != m {
        return Err(Error::Pooling(format!("{m} estimates but {} variances", variances.len())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Pooling(format!("confidence level {level} outside (0, 1)")));
    }
    let mf = m as f64;
    let point = estimates.iter().sum::<f64>() / mf;
    let within_var = variances.iter().sum::<f64>() / mf;
    let between_var = estimates.iter().map(|e| (e - point).powi(2)).sum::<f64>() / (mf - 1.0);
    let inflated = (1.0 + 1.0 / mf) * between_var;
    let total_var = within_var + inflated;
    let upper = 0.5 + level / 2.0;
    let df = if between_var > 0.0 { (mf - 1.0) * (1.0 + within_var / inflated).powi(2) } else { f64::INFINITY };
    // Beyond T_DF_LIMIT the t and normal quantiles agree to ~1e-7.
    let q = if df < T_DF_LIMIT {
        StudentsT::new(0.0, 1.0, df).expect("positive df").inverse_cdf(upper)
    } else {
        Normal::standard().inverse_cdf(upper)
    };
    let half = q * total_var.sqrt();
    Ok(PooledEstimate { point, within_var, between_var, total_var, df, ci_low: point - half, ci_high: point + half, level })
}

/// Combine every coefficient of per-imputation fits.
pub fn pool(fits: &[FitSummary], level: f64) -> Result<Vec<PooledEstimate>> {
    let k = fits.first().map_or(0, |f| f.estimates.len());
    if fits.iter().any(|f| f.estimates.len() != k || f.variances.len() != k) {
        return Err(Error::Pooling("fits have different numbers of coefficients".into()));
    }
    (0..k)
        .map(|j| {
            let est: Vec<f64> = fits.iter().map(|f| f.estimates[j]).collect();
            let var: Vec<f64> = fits.iter().map(|f| f.variances[j]).collect();
            pool_scalar(&est, &var, level)
        })
        .collect()
}

/// Fit and pool in one step; returns coefficient labels with the pooled rows.
pub fn analyze(
    datasets: &[Dataset],
    family: SubstantiveFamily,
    formula: &ModelFormula,
    level: f64,
) -> Result<Vec<(String, PooledEstimate)>> {
    let fits = fit_each(datasets, family, formula)?;
    let pooled = pool(&fits, level)?;
    let labels = formula.labels();
    Ok(labels.into_iter().zip(pooled).collect())
}

/// Columns: term, estimate, std_error, df, ci_low, ci_high, within_var, between_var.
pub fn write_pooled_csv<W: Write>(rows: &[(String, PooledEstimate)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "estimate", "std_error", "df", "ci_low", "ci_high", "within_var", "between_var"])?;
    for (term, p) in rows {
        w.write_record([
            term.as_str(),
            &format_value(p.point),
            &format_value(p.std_error()),
            &format_value(p.df),
            &format_value(p.ci_low),
            &format_value(p.ci_high),
            &format_value(p.within_var),
            &format_value(p.between_var),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, VariableKind::*, VariableRole::*};
    use proptest::prelude::*;

    #[test]
    fn rubin_example() {
        let p = pool_scalar(&[1.0, 2.0, 3.0], &[0.5; 3], 0.95).unwrap();
        assert_eq!(p.point, 2.0);
        assert_eq!(p.within_var, 0.5);
        assert_eq!(p.between_var, 1.0);
        assert!((p.total_var - (0.5 + 4.0 / 3.0)).abs() < 1e-12);
        let df = 2.0 * (1.0f64 + 0.5 / (4.0 / 3.0)).powi(2);
        assert!((p.df - df).abs() < 1e-12);
        let q = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.975);
        assert!((p.ci_high - (2.0 + q * p.total_var.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn zero_between_variance_uses_normal_quantile() {
        let p = pool_scalar(&[1.0; 4], &[0.04; 4], 0.95).unwrap();
        assert_eq!((p.point, p.between_var), (1.0, 0.0));
        assert!((p.total_var - 0.04).abs() < 1e-15);
        assert!(p.df.is_infinite());
        assert!((p.ci_high - 1.0 - 1.959963984540054 * 0.2).abs() < 1e-9);
    }

    #[test]
    fn pooling_errors() {
        assert!(matches!(pool_scalar(&[1.0], &[0.1], 0.95), Err(Error::Pooling(_))));
        assert!(matches!(pool_scalar(&[1.0, 2.0], &[0.1], 0.95), Err(Error::Pooling(_))));
        assert!(matches!(pool_scalar(&[1.0, 2.0], &[0.1, 0.1], 1.5), Err(Error::Pooling(_))));
    }

    fn line(y: Vec<f64>) -> Dataset {
        Dataset::new(vec![
            Column::complete("y", Continuous, Outcome, y),
            Column::complete("x", Continuous, PartialCovariate, vec![0.0, 1.0, 2.0, 3.0]),
        ])
        .unwrap()
    }

    #[test]
    fn identical_datasets_and_perfect_fit() {
        let f = ModelFormula::parse("y ~ x").unwrap();
        let d = line(vec![1.0, 3.0, 5.0, 7.0]);
        let fits = fit_each(&[d.clone(), d.clone(), d], SubstantiveFamily::Linear, &f).unwrap();
        assert!(fits.windows(2).all(|w| w[0] == w[1]));
        assert!(fits[0].variances.iter().all(|v| v.abs() < 1e-20));
        let rows = analyze(&[line(vec![1.0, 3.0, 5.0, 7.5]), line(vec![1.0, 3.0, 5.0, 7.0])], SubstantiveFamily::Linear, &f, 0.9)
            .unwrap();
        assert_eq!(rows[0].0, "(Intercept)");
        assert_eq!(rows[1].0, "x");
        let mut buf = Vec::new();
        write_pooled_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("term,estimate,std_error,df,ci_low,ci_high"));
    }

    #[test]
    fn failed_fit_aborts_pooling() {
        let f = ModelFormula::parse("y ~ x").unwrap();
        let d = Dataset::new(vec![
            Column::complete("y", Continuous, Outcome, vec![1.0, 2.0]),
            Column::complete("x", Continuous, PartialCovariate, vec![0.0, 1.0]),
        ])
        .unwrap();
        assert!(matches!(fit_each(&[d.clone(), d], SubstantiveFamily::Linear, &f), Err(Error::Pooling(_))));
    }

    proptest! {
        #[test]
        fn rubin_invariants(
            est in prop::collection::vec(-10.0f64..10.0, 2..12),
            var_seed in 0.001f64..2.0,
            c in 0.1f64..5.0,
        ) {
            let var: Vec<f64> = est.iter().enumerate().map(|(i, _)| var_seed * (1.0 + i as f64 * 0.1)).collect();
            let p = pool_scalar(&est, &var, 0.95).unwrap();
            prop_assert!(p.total_var >= p.within_var);
            prop_assert!(p.between_var >= 0.0);
            prop_assert!(p.ci_low <= p.point && p.point <= p.ci_high);
            let all_equal = est.iter().all(|e| *e == est[0]);
            prop_assert_eq!(p.total_var == p.within_var, all_equal);

            let mut rev = est.clone();
            rev.reverse();
            let mut rev_var = var.clone();
            rev_var.reverse();
            let q = pool_scalar(&rev, &rev_var, 0.95).unwrap();
            prop_assert!((q.point - p.point).abs() <= 1e-12 * (1.0 + p.point.abs()));

            let scaled: Vec<f64> = est.iter().map(|e| e * c).collect();
            let scaled_var: Vec<f64> = var.iter().map(|v| v * c * c).collect();
            let s = pool_scalar(&scaled, &scaled_var, 0.95).unwrap();
            prop_assert!((s.point - c * p.point).abs() <= 1e-9 * (1.0 + s.point.abs()));
            prop_assert!((s.total_var - c * c * p.total_var).abs() <= 1e-9 * s.total_var);
        }

        #[test]
        fn df_grows_as_between_variance_vanishes(eps in 1e-6f64..1e-3) {
            let small = pool_scalar(&[1.0, 1.0 + eps, 1.0 - eps], &[0.1; 3], 0.95).unwrap();
            let large = pool_scalar(&[1.0, 1.0 + 100.0 * eps, 1.0 - 100.0 * eps], &[0.1; 3], 0.95).unwrap();
            prop_assert!(small.df > large.df);
            prop_assert!(small.df > 1e4);
        }
    }
}
