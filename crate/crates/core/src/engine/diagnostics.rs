use std::io::Write;

use super::Prepared;
use crate::dataset::format_value;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VariableDiagnostics {
    pub name: String,
    /// Cell imputations performed (cells × sweeps × imputations).
    pub cells: u64,
    /// Candidates proposed by the rejection sampler.
    pub proposals: u64,
    /// Candidates accepted by the rejection sampler.
    pub accepted: u64,
    /// Cells where the rejection cap was hit and the best candidate was kept.
    pub fallbacks: u64,
}

impl VariableDiagnostics {
    /// Rejected candidates per rejection-sampled cell.
    pub fn mean_rejections(&self) -> f64 {
        let sampled = self.accepted + self.fallbacks;
        if sampled == 0 {
            0.0
        } else {
            (self.proposals - self.accepted) as f64 / sampled as f64
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceBlock {
    /// Substantive-model parameters.
    Psi,
    /// Covariate-model parameters.
    Phi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based imputation index.
    pub imputation: usize,
    /// 1-based sweep index.
    pub sweep: usize,
    pub variable: String,
    pub block: TraceBlock,
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub variables: Vec<VariableDiagnostics>,
    pub traces: Vec<TraceRow>,
    /// Chain restarts caused by fit failures, summed over imputations.
    pub retries: usize,
}

impl Diagnostics {
    pub(crate) fn new(p: &Prepared) -> Self {
        Diagnostics {
            variables: p
                .models
                .iter()
                .map(|m| VariableDiagnostics { name: m.spec.target.clone(), ..Default::default() })
                .collect(),
            traces: vec![],
            retries: 0,
        }
    }

    pub(crate) fn merge(&mut self, other: Diagnostics) {
        for (a, b) in self.variables.iter_mut().zip(&other.variables) {
            a.cells += b.cells;
            a.proposals += b.proposals;
            a.accepted += b.accepted;
            a.fallbacks += b.fallbacks;
        }
        self.traces.extend(other.traces);
        self.retries += other.retries;
    }

    pub fn fallbacks(&self) -> u64 {
        self.variables.iter().map(|v| v.fallbacks).sum()
    }

    /// Summary rows first, then one row per traced parameter:
    /// `section,imputation,sweep,variable,name,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["section", "imputation", "sweep", "variable", "name", "value"])?;
        for v in &self.variables {
            let stats = [
                ("cells", v.cells as f64),
                ("proposals", v.proposals as f64),
                ("mean_rejections", v.mean_rejections()),
                ("acceptance_rate", v.acceptance_rate()),
                ("fallbacks", v.fallbacks as f64),
            ];
            for (name, value) in stats {
                w.write_record(["summary", "", "", &v.name, name, &format_value(value)])?;
            }
        }
        w.write_record(["summary", "", "", "", "retries", &self.retries.to_string()])?;
        for t in &self.traces {
            let block = match t.block {
                TraceBlock::Psi => "psi",
                TraceBlock::Phi => "phi",
            };
            w.write_record([
                "trace",
                &t.imputation.to_string(),
                &t.sweep.to_string(),
                &t.variable,
                &format!("{block}:{}", t.name),
                &format_value(t.value),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
