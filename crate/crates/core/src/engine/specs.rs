use super::{DerivedColumn, NELSON_AALEN_COLUMN};
use crate::covariate::{CovariateFamily, CovariateModelSpec};
use crate::dataset::{Dataset, VariableRole};
use crate::error::Result;
use crate::formula::{ModelFormula, Response, Term};
use crate::substantive::SubstantiveFamily;

/// Outcome predictors for an FCS covariate model: the outcome itself, or for
/// survival data the event indicator plus the marginal Nelson-Aalen hazard.
pub(super) fn outcome_terms(formula: &ModelFormula) -> (Vec<Term>, Vec<DerivedColumn>) {
    match &formula.response {
        Response::Single(y) => (vec![Term::var(y)], vec![]),
        Response::Survival { time, event } => (
            vec![Term::var(event), Term::var(NELSON_AALEN_COLUMN)],
            vec![DerivedColumn::NelsonAalen {
                name: NELSON_AALEN_COLUMN.to_string(),
                time: time.clone(),
                event: event.clone(),
            }],
        ),
    }
}

/// Standard FCS imputation models for every partially observed covariate.
///
/// Each model conditions on the other covariates and the outcome. For a
/// non-survival outcome, every substantive term that multiplies the target
/// by other variables adds the outcome times those variables.
pub fn default_fcs_specs(
    d: &Dataset,
    family: SubstantiveFamily,
    formula: &ModelFormula,
) -> Result<(Vec<CovariateModelSpec>, Vec<DerivedColumn>)> {
    let (outcome, derived) = outcome_terms(formula);
    let mut specs = Vec::new();
    for col in d.columns().iter().filter(|c| c.role == VariableRole::PartialCovariate) {
        let mut predictors: Vec<Term> = d
            .columns()
            .iter()
            .filter(|c| c.role.is_covariate() && c.name != col.name)
            .map(|c| Term::var(&c.name))
            .collect();
        predictors.extend(outcome.iter().cloned());
        if let (Response::Single(y), false) = (&formula.response, family == SubstantiveFamily::Cox) {
            for t in &formula.terms {
                if !t.contains(&col.name) {
                    continue;
                }
                let others: Vec<(String, u32)> =
                    t.factors().iter().filter(|(n, _)| n != &col.name).cloned().collect();
                if others.is_empty() {
                    continue;
                }
                let term = Term::new(others.into_iter().chain([(y.clone(), 1)]))?;
                if !predictors.contains(&term) {
                    predictors.push(term);
                }
            }
        }
        specs.push(CovariateModelSpec::new(&col.name, CovariateFamily::for_kind(col.kind), predictors));
    }
    Ok((specs, derived))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, VariableKind::*, VariableRole::*};

    fn data(names: &[(&str, crate::dataset::VariableKind, VariableRole)]) -> Dataset {
        Dataset::new(
            names
                .iter()
                .map(|(n, k, r)| {
                    let values = if *r == Time { vec![1.0, 2.0, 3.0] } else { vec![1.0, 0.0, 1.0] };
                    let mut c = Column::complete(n, *k, *r, values);
                    if *r == PartialCovariate {
                        c.observed[1] = false;
                    }
                    c
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn quadratic_imputes_x_from_y_only() {
        let d = data(&[("y", Continuous, Outcome), ("x", Continuous, PartialCovariate)]);
        let f = ModelFormula::parse("y ~ x + x^2").unwrap();
        let (specs, derived) = default_fcs_specs(&d, SubstantiveFamily::Linear, &f).unwrap();
        assert!(derived.is_empty());
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].formula().to_string(), "x ~ y");
    }

    #[test]
    fn interaction_adds_outcome_products() {
        let d = data(&[
            ("y", Continuous, Outcome),
            ("x1", Binary, PartialCovariate),
            ("x2", Continuous, PartialCovariate),
        ]);
        let f = ModelFormula::parse("y ~ x1 + x2 + x1*x2").unwrap();
        let (specs, _) = default_fcs_specs(&d, SubstantiveFamily::Linear, &f).unwrap();
        assert_eq!(specs[0].formula().to_string(), "x1 ~ x2 + y + x2*y");
        assert_eq!(specs[0].family, CovariateFamily::Logistic);
        assert_eq!(specs[1].formula().to_string(), "x2 ~ x1 + y + x1*y");
        assert_eq!(specs[1].family, CovariateFamily::Normal);
    }

    #[test]
    fn survival_uses_event_and_cumulative_hazard() {
        let d = data(&[
            ("t", Continuous, Time),
            ("d", Binary, Event),
            ("x1", Binary, PartialCovariate),
            ("x2", Continuous, PartialCovariate),
        ]);
        let f = ModelFormula::parse("surv(t, d) ~ x1 + x2").unwrap();
        let (specs, derived) = default_fcs_specs(&d, SubstantiveFamily::Cox, &f).unwrap();
        assert_eq!(specs[0].formula().to_string(), format!("x1 ~ x2 + d + {NELSON_AALEN_COLUMN}"));
        assert_eq!(derived.len(), 1);
        assert_eq!(derived[0].name(), NELSON_AALEN_COLUMN);
    }
}
