use super::specs::outcome_terms;
use super::EngineConfig;
use crate::covariate::{CovariateFamily, CovariateModelSpec};
use crate::dataset::{Column, Dataset, VariableKind, VariableRole};
use crate::error::{Error, Result};
use crate::formula::{ModelFormula, Term};

/// A "just another variable" setup: the dataset with every derived term
/// materialized as its own column, the substantive formula rewritten to use
/// those columns, and an FCS configuration imputing all of them linearly.
#[derive(Debug, Clone)]
pub struct JavSetup {
    pub dataset: Dataset,
    pub formula: ModelFormula,
    pub config: EngineConfig,
}

/// Column name for a derived term: `x_sq`, `x_pow3`, `x1x2`, `x1x2_sq`.
pub(super) fn derived_name(t: &Term) -> String {
    t.factors()
        .iter()
        .map(|(n, p)| match p {
            1 => n.clone(),
            2 => format!("{n}_sq"),
            p => format!("{n}_pow{p}"),
        })
        .collect()
}

pub fn jav_config(
    d: &Dataset,
    formula: &ModelFormula,
    m: usize,
    iterations: usize,
    seed: u64,
) -> Result<JavSetup> {
    let mut columns: Vec<Column> = d.columns().to_vec();
    for c in columns.iter_mut().filter(|c| c.role == VariableRole::PartialCovariate) {
        c.kind = VariableKind::Continuous;
    }
    let mut terms = Vec::with_capacity(formula.terms.len());
    for t in &formula.terms {
        if t.as_plain_variable().is_some() {
            terms.push(t.clone());
            continue;
        }
        let name = derived_name(t);
        if d.index_of(&name).is_some() {
            return Err(Error::Config(format!("derived column `{name}` clashes with an existing column")));
        }
        let factors: Vec<(&Column, u32)> =
            t.factors().iter().map(|(n, p)| Ok((d.column_by_name(n)?, *p))).collect::<Result<_>>()?;
        let n = d.n_rows();
        let observed: Vec<bool> = (0..n).map(|r| factors.iter().all(|(c, _)| c.observed[r])).collect();
        let values: Vec<f64> = (0..n)
            .map(|r| {
                if observed[r] {
                    factors.iter().map(|(c, p)| c.values[r].powi(*p as i32)).product()
                } else {
                    f64::NAN
                }
            })
            .collect();
        let role = if observed.iter().all(|o| *o) { VariableRole::CompleteCovariate } else { VariableRole::PartialCovariate };
        columns.push(Column { name: name.clone(), kind: VariableKind::Continuous, role, values, observed });
        terms.push(Term::var(&name));
    }
    let dataset = Dataset::new(columns)?;
    let formula = ModelFormula::new(formula.response.clone(), terms, formula.intercept);
    let (outcome, derived) = outcome_terms(&formula);
    let specs = dataset
        .columns()
        .iter()
        .filter(|c| c.role == VariableRole::PartialCovariate)
        .map(|col| {
            let mut predictors: Vec<Term> = dataset
                .columns()
                .iter()
                .filter(|c| c.role.is_covariate() && c.name != col.name)
                .map(|c| Term::var(&c.name))
                .collect();
            predictors.extend(outcome.iter().cloned());
            CovariateModelSpec::new(&col.name, CovariateFamily::Normal, predictors)
        })
        .collect();
    let mut config = EngineConfig::fcs(m, seed, specs).with_iterations(iterations);
    config.derived_columns = derived;
    Ok(JavSetup { dataset, formula, config })
}
