//! Rectangular numeric data with an explicit observation mask.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MISSING_TOKENS: [&str; 3] = ["", "NA", "."];

/// Column holding the imputation index in long-format output.
pub const IMP_COLUMN: &str = "_imp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableRole {
    PartialCovariate,
    CompleteCovariate,
    Outcome,
    Time,
    Event,
}

impl VariableRole {
    pub fn allows_missing(self) -> bool {
        matches!(self, VariableRole::PartialCovariate)
    }

    pub fn is_covariate(self) -> bool {
        matches!(self, VariableRole::PartialCovariate | VariableRole::CompleteCovariate)
    }

    pub fn is_outcome_like(self) -> bool {
        matches!(self, VariableRole::Outcome | VariableRole::Time | VariableRole::Event)
    }
}

impl fmt::Display for VariableRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VariableRole::PartialCovariate => "partial covariate",
            VariableRole::CompleteCovariate => "complete covariate",
            VariableRole::Outcome => "outcome",
            VariableRole::Time => "time",
            VariableRole::Event => "event",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub name: String,
    pub kind: VariableKind,
    pub role: VariableRole,
}

impl SchemaEntry {
    pub fn new(name: &str, kind: VariableKind, role: VariableRole) -> Self {
        SchemaEntry { name: name.to_string(), kind, role }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(rename = "column")]
    pub columns: Vec<SchemaEntry>,
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: VariableKind,
    pub role: VariableRole,
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl Column {
    /// Fully observed column.
    pub fn complete(name: &str, kind: VariableKind, role: VariableRole, values: Vec<f64>) -> Self {
        let observed = vec![true; values.len()];
        Column { name: name.to_string(), kind, role, values, observed }
    }

    pub fn n_missing(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    pub fn missing_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed.iter().enumerate().filter(|(_, o)| !**o).map(|(i, _)| i)
    }

    pub fn observed_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed.iter().enumerate().filter(|(_, o)| **o).map(|(i, _)| i)
    }

    pub fn schema_entry(&self) -> SchemaEntry {
        SchemaEntry::new(&self.name, self.kind, self.role)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.values.len() != n || self.observed.len() != n {
            return Err(Error::Schema(format!(
                "column `{}` has {} values and {} mask entries, expected {n}",
                self.name,
                self.values.len(),
                self.observed.len()
            )));
        }
        if self.role == VariableRole::Event && self.kind != VariableKind::Binary {
            return Err(Error::Schema(format!("event column `{}` must be binary", self.name)));
        }
        for (row, (&v, &obs)) in self.values.iter().zip(&self.observed).enumerate() {
            if !obs {
                if !self.role.allows_missing() {
                    return Err(Error::ForbiddenMissing {
                        row,
                        column: self.name.clone(),
                        role: self.role.to_string(),
                    });
                }
                continue;
            }
            if !v.is_finite() {
                return Err(Error::BadValue { row, column: self.name.clone(), msg: format!("non-finite value {v}") });
            }
            if self.kind == VariableKind::Binary && v != 0.0 && v != 1.0 {
                return Err(Error::NotBinary { row, column: self.name.clone(), value: v });
            }
            if self.role == VariableRole::Time && v <= 0.0 {
                return Err(Error::BadValue { row, column: self.name.clone(), msg: format!("time must be positive, got {v}") });
            }
        }
        Ok(())
    }
}

/// Values for the missing cells of a dataset: one vector per column, holding
/// the fills for that column's missing rows in ascending row order.
pub type Fill = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    columns: Vec<Column>,
}

impl Dataset {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.values.len());
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
            c.validate(n)?;
        }
        Ok(Dataset { n, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_by_name(&self, name: &str) -> Result<&Column> {
        self.index_of(name).map(|i| &self.columns[i]).ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col].values[row]
    }

    /// Overwrite a missing cell. Observed cells are never written.
    pub(crate) fn set_imputed(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(!self.columns[col].observed[row], "attempt to overwrite an observed cell");
        self.columns[col].values[row] = value;
    }

    pub(crate) fn push_column(&mut self, column: Column) -> Result<()> {
        if self.index_of(&column.name).is_some() {
            return Err(Error::Schema(format!("duplicate column `{}`", column.name)));
        }
        column.validate(self.n)?;
        self.columns.push(column);
        Ok(())
    }

    pub(crate) fn truncate_columns(&mut self, len: usize) {
        self.columns.truncate(len);
    }

    pub fn schema(&self) -> Schema {
        Schema { columns: self.columns.iter().map(Column::schema_entry).collect() }
    }

    pub fn n_missing_total(&self) -> usize {
        self.columns.iter().map(Column::n_missing).sum()
    }

    pub fn partial_covariates(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&i| self.columns[i].role == VariableRole::PartialCovariate).collect()
    }

    /// Rows with every cell observed.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n).filter(|&r| self.columns.iter().all(|c| c.observed[r])).collect()
    }

    /// Copy restricted to `rows`, in the given order.
    pub fn subset_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                kind: c.kind,
                role: c.role,
                values: rows.iter().map(|&r| c.values[r]).collect(),
                observed: rows.iter().map(|&r| c.observed[r]).collect(),
            })
            .collect();
        Dataset { n: rows.len(), columns }
    }

    /// Copy of the dataset with every missing cell filled from `fill`. The
    /// mask of the returned dataset is the mask of `self`.
    pub fn completed_view(&self, fill: &[Vec<f64>]) -> Result<Dataset> {
        if fill.len() != self.columns.len() && !(fill.is_empty() && self.n_missing_total() == 0) {
            return Err(Error::Schema(format!(
                "fill has {} columns, dataset has {}",
                fill.len(),
                self.columns.len()
            )));
        }
        let mut out = self.clone();
        for (ci, col) in out.columns.iter_mut().enumerate() {
            let missing: Vec<usize> = col.missing_rows().collect();
            let given = fill.get(ci).map_or(&[][..], |f| f.as_slice());
            if given.len() != missing.len() {
                return Err(Error::FillShape { column: col.name.clone(), expected: missing.len(), got: given.len() });
            }
            for (&row, &v) in missing.iter().zip(given) {
                col.values[row] = v;
            }
        }
        Ok(out)
    }

    /// Every cell holds a finite number (missing cells included).
    pub fn is_filled(&self) -> bool {
        self.columns.iter().all(|c| c.values.iter().all(|v| v.is_finite()))
    }

    /// Partial covariates ordered by ascending missing count; ties keep
    /// column order.
    pub fn missingness_order(&self) -> Vec<usize> {
        let mut cols = self.partial_covariates();
        cols.sort_by_key(|&i| self.columns[i].n_missing());
        cols
    }

    pub fn read_csv(path: impl AsRef<Path>, missing_tokens: &[&str], schema: &Schema) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::read_csv_from(file, missing_tokens, schema)
    }

    pub fn read_csv_from<R: Read>(reader: R, missing_tokens: &[&str], schema: &Schema) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let positions = header_positions(&headers, schema, &[])?;
        let mut columns: Vec<Column> = schema
            .columns
            .iter()
            .map(|e| Column { name: e.name.clone(), kind: e.kind, role: e.role, values: vec![], observed: vec![] })
            .collect();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            for (col, &pos) in columns.iter_mut().zip(&positions) {
                let raw = record.get(pos).unwrap_or("").trim();
                if missing_tokens.contains(&raw) {
                    col.values.push(f64::NAN);
                    col.observed.push(false);
                } else {
                    let v: f64 = raw.parse().map_err(|_| Error::Parse {
                        row,
                        column: col.name.clone(),
                        value: raw.to_string(),
                    })?;
                    col.values.push(v);
                    col.observed.push(true);
                }
            }
        }
        Dataset::new(columns)
    }

    pub fn write_csv<W: Write>(&self, writer: W, missing_token: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..self.n {
            w.write_record(self.columns.iter().map(|c| {
                if c.observed[r] {
                    format_value(c.values[r])
                } else {
                    missing_token.to_string()
                }
            }))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn header_positions(headers: &[String], schema: &Schema, ignore: &[&str]) -> Result<Vec<usize>> {
    for h in headers {
        if !ignore.contains(&h.as_str()) && !schema.columns.iter().any(|e| &e.name == h) {
            return Err(Error::UnknownColumn(h.clone()));
        }
    }
    schema
        .columns
        .iter()
        .map(|e| {
            headers
                .iter()
                .position(|h| h == &e.name)
                .ok_or_else(|| Error::Schema(format!("column `{}` is absent from the header", e.name)))
        })
        .collect()
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Stack completed datasets into long format with a leading `_imp` column
/// numbered from 1.
pub fn write_long_csv<W: Write>(datasets: &[Dataset], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = datasets.first() else {
        return Err(Error::Config("no datasets to write".into()));
    };
    let mut header = vec![IMP_COLUMN.to_string()];
    header.extend(first.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for (m, d) in datasets.iter().enumerate() {
        for r in 0..d.n {
            let mut rec = vec![(m + 1).to_string()];
            rec.extend(d.columns.iter().map(|c| format_value(c.values[r])));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read long-format completed data back into one fully observed dataset per
/// imputation, ordered by `_imp`.
pub fn read_long_csv<R: Read>(reader: R, schema: &Schema) -> Result<Vec<Dataset>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let imp_pos = headers
        .iter()
        .position(|h| h == IMP_COLUMN)
        .ok_or_else(|| Error::Schema(format!("long-format file lacks an `{IMP_COLUMN}` column")))?;
    let positions = header_positions(&headers, schema, &[IMP_COLUMN])?;
    let mut groups: std::collections::BTreeMap<u64, Vec<Vec<f64>>> = Default::default();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let raw_imp = record.get(imp_pos).unwrap_or("").trim();
        let imp: u64 = raw_imp.parse().map_err(|_| Error::Parse {
            row,
            column: IMP_COLUMN.into(),
            value: raw_imp.into(),
        })?;
        let cols = groups.entry(imp).or_insert_with(|| vec![Vec::new(); schema.columns.len()]);
        for ((vals, &pos), entry) in cols.iter_mut().zip(&positions).zip(&schema.columns) {
            let raw = record.get(pos).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: entry.name.clone(),
                value: raw.to_string(),
            })?;
            vals.push(v);
        }
    }
    groups
        .into_values()
        .map(|cols| {
            Dataset::new(
                schema
                    .columns
                    .iter()
                    .zip(cols)
                    .map(|(e, values)| Column::complete(&e.name, e.kind, e.role, values))
                    .collect(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use VariableKind::*;
    use VariableRole::*;

    fn schema3() -> Schema {
        Schema {
            columns: vec![
                SchemaEntry::new("x", Continuous, PartialCovariate),
                SchemaEntry::new("z", Continuous, PartialCovariate),
                SchemaEntry::new("b", Binary, CompleteCovariate),
            ],
        }
    }

    #[test]
    fn empty_token_becomes_missing() {
        let d = Dataset::read_csv_from("x,z,b\n1.5,,0\n".as_bytes(), &[""], &schema3()).unwrap();
        assert_eq!(d.value(0, 0), 1.5);
        assert!(d.column(0).observed[0]);
        assert!(!d.column(1).observed[0]);
        assert_eq!(d.value(0, 2), 0.0);
        assert!(d.column(2).observed[0]);
    }

    #[test]
    fn missing_outcome_rejected() {
        let schema = Schema {
            columns: vec![
                SchemaEntry::new("x", Continuous, PartialCovariate),
                SchemaEntry::new("y", Continuous, Outcome),
            ],
        };
        let err = Dataset::read_csv_from("x,y\n1,NA\n".as_bytes(), &DEFAULT_MISSING_TOKENS, &schema).unwrap_err();
        assert!(matches!(err, Error::ForbiddenMissing { .. }), "{err}");
    }

    #[test]
    fn binary_two_rejected() {
        let err = Dataset::read_csv_from("x,z,b\n1,2,2\n".as_bytes(), &[""], &schema3()).unwrap_err();
        assert!(matches!(err, Error::NotBinary { .. }));
    }

    #[test]
    fn unparseable_and_unknown() {
        let err = Dataset::read_csv_from("x,z,b\n1,abc,0\n".as_bytes(), &[""], &schema3()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = Dataset::read_csv_from("x,z,b,q\n1,2,0,3\n".as_bytes(), &[""], &schema3()).unwrap_err();
        assert!(matches!(err, Error::UnknownColumn(ref c) if c == "q"));
    }

    #[test]
    fn nonpositive_time_rejected() {
        let schema = Schema {
            columns: vec![
                SchemaEntry::new("w", Continuous, Time),
                SchemaEntry::new("d", Binary, Event),
            ],
        };
        assert!(Dataset::read_csv_from("w,d\n0,1\n".as_bytes(), &[""], &schema).is_err());
        assert!(Dataset::read_csv_from("w,d\n2,1\n".as_bytes(), &[""], &schema).is_ok());
    }

    #[test]
    fn completed_view_cases() {
        let full = Dataset::read_csv_from("x,z,b\n1,2,0\n".as_bytes(), &[""], &schema3()).unwrap();
        assert_eq!(full.completed_view(&[]).unwrap(), full);

        let d = Dataset::read_csv_from("x,z,b\n1,,0\n2,5,1\n".as_bytes(), &[""], &schema3()).unwrap();
        let v = d.completed_view(&[vec![], vec![3.2], vec![]]).unwrap();
        assert_eq!(v.value(0, 1), 3.2);
        assert!(!v.column(1).observed[0]);
        assert_eq!(v.value(1, 1), 5.0);

        let err = d.completed_view(&[vec![], vec![], vec![]]).unwrap_err();
        assert!(matches!(err, Error::FillShape { .. }));
    }

    #[test]
    fn order_by_missing_count() {
        let mut x = Column::complete("x1", Continuous, PartialCovariate, vec![0.0; 12]);
        let mut z = Column::complete("x2", Continuous, PartialCovariate, vec![0.0; 12]);
        for r in 0..10 {
            x.observed[r] = false;
        }
        for r in 0..3 {
            z.observed[r] = false;
        }
        let d = Dataset::new(vec![x.clone(), z.clone()]).unwrap();
        assert_eq!(d.missingness_order(), vec![1, 0]);

        z.observed = x.observed.clone();
        let d = Dataset::new(vec![x.clone(), z]).unwrap();
        assert_eq!(d.missingness_order(), vec![0, 1]);

        let d = Dataset::new(vec![x]).unwrap();
        assert_eq!(d.missingness_order(), vec![0]);
    }

    #[test]
    fn long_format_round_trip() {
        let d = Dataset::read_csv_from("x,z,b\n1,2,0\n3.25,-1,1\n".as_bytes(), &[""], &schema3()).unwrap();
        let mut buf = Vec::new();
        write_long_csv(&[d.clone(), d.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("_imp,x,z,b\n1,"));
        let back = read_long_csv(buf.as_slice(), &d.schema()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1], d);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            cells in proptest::collection::vec((any::<f64>().prop_filter("finite", |v| v.is_finite()), any::<bool>(), any::<bool>()), 1..40)
        ) {
            let n = cells.len();
            let x = Column {
                name: "x".into(), kind: Continuous, role: PartialCovariate,
                values: cells.iter().map(|c| if c.1 { c.0 } else { f64::NAN }).collect(),
                observed: cells.iter().map(|c| c.1).collect(),
            };
            let b = Column::complete("b", Binary, Outcome, cells.iter().map(|c| c.2 as u8 as f64).collect());
            let d = Dataset::new(vec![x, b]).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf, "NA").unwrap();
            let back = Dataset::read_csv_from(buf.as_slice(), &DEFAULT_MISSING_TOKENS, &d.schema()).unwrap();
            prop_assert_eq!(back.n_rows(), n);
            for c in 0..2 {
                prop_assert_eq!(&back.column(c).observed, &d.column(c).observed);
                for r in 0..n {
                    if d.column(c).observed[r] {
                        prop_assert_eq!(back.value(r, c).to_bits(), d.value(r, c).to_bits());
                    }
                }
            }
        }
    }
}
