//! Finite-population data model and CSV ingestion.
//!
//! A [`Frame`] holds the population `U = {1..N}`: one column per
//! [`VariableSpec`], no missing values. Totals of study variables are exact
//! sums over the rows.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sums::ksum;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("MissingHeader: file has no header row")]
    MissingHeader,
    #[error("MissingColumn: schema variable `{0}` not found in header")]
    MissingColumn(String),
    #[error("UnknownLevel: value `{value}` is not a level of `{column}`")]
    UnknownLevel { column: String, value: String },
    #[error("MissingValue: row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("NonNumeric: row {row}, column `{column}`: `{value}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("UnknownVariable: `{0}`")]
    UnknownVariable(String),
    #[error("EmptyFrame: a frame needs at least one row")]
    EmptyFrame,
    #[error("BadSchema: {0}")]
    BadSchema(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    /// Closed, ordered set of distinct labels.
    Categorical { levels: Vec<String> },
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarRole {
    Predictor,
    Study,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    pub role: VarRole,
}

impl VariableSpec {
    pub fn categorical(name: &str, levels: &[&str], role: VarRole) -> Self {
        Self {
            name: name.to_string(),
            kind: VarKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
            role,
        }
    }

    pub fn numeric(name: &str, role: VarRole) -> Self {
        Self {
            name: name.to_string(),
            kind: VarKind::Numeric,
            role,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            VarKind::Categorical { levels } => Some(levels),
            VarKind::Numeric => None,
        }
    }

    fn validate(&self) -> Result<(), FrameError> {
        if let VarKind::Categorical { levels } = &self.kind {
            if levels.is_empty() {
                return Err(FrameError::BadSchema(format!(
                    "`{}` has an empty level set",
                    self.name
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for l in levels {
                if l.is_empty() || !seen.insert(l) {
                    return Err(FrameError::BadSchema(format!(
                        "`{}` has empty or duplicate level `{l}`",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One frame column, level-coded for categorical variables.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Categorical(Vec<u16>),
    Numeric(Vec<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Categorical(v) => v.len(),
            Column::Numeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A single cell value: a categorical level index or a number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Level(u16),
    Number(f64),
}

/// Immutable finite population: schema plus fully populated columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    specs: Vec<VariableSpec>,
    columns: Vec<Column>,
    n: usize,
}

impl Frame {
    pub fn new(specs: Vec<VariableSpec>, columns: Vec<Column>) -> Result<Self, FrameError> {
        if specs.len() != columns.len() {
            return Err(FrameError::BadSchema(
                "specs and columns count mismatch".into(),
            ));
        }
        let n = columns.first().map(|c| c.len()).unwrap_or(0);
        if n == 0 {
            return Err(FrameError::EmptyFrame);
        }
        let mut n_pred = 0;
        let mut n_study = 0;
        for (spec, col) in specs.iter().zip(&columns) {
            spec.validate()?;
            if col.len() != n {
                return Err(FrameError::BadSchema(format!(
                    "column `{}` has {} rows, expected {n}",
                    spec.name,
                    col.len()
                )));
            }
            match (&spec.kind, col) {
                (VarKind::Categorical { levels }, Column::Categorical(v)) => {
                    if let Some(&bad) = v.iter().find(|&&ix| ix as usize >= levels.len()) {
                        return Err(FrameError::UnknownLevel {
                            column: spec.name.clone(),
                            value: format!("#{bad}"),
                        });
                    }
                }
                (VarKind::Numeric, Column::Numeric(v)) => {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(FrameError::BadSchema(format!(
                            "column `{}` has non-finite values",
                            spec.name
                        )));
                    }
                }
                _ => {
                    return Err(FrameError::BadSchema(format!(
                        "column `{}` does not match its spec kind",
                        spec.name
                    )))
                }
            }
            match spec.role {
                VarRole::Predictor => n_pred += 1,
                VarRole::Study => n_study += 1,
            }
        }
        if n_pred == 0 || n_study == 0 {
            return Err(FrameError::BadSchema(
                "a frame needs at least one predictor and one study variable".into(),
            ));
        }
        Ok(Self { specs, columns, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn specs(&self) -> &[VariableSpec] {
        &self.specs
    }

    pub fn predictor_specs(&self) -> Vec<&VariableSpec> {
        self.specs
            .iter()
            .filter(|s| s.role == VarRole::Predictor)
            .collect()
    }

    pub fn var_index(&self, name: &str) -> Result<usize, FrameError> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| FrameError::UnknownVariable(name.to_string()))
    }

    pub fn spec(&self, name: &str) -> Result<&VariableSpec, FrameError> {
        Ok(&self.specs[self.var_index(name)?])
    }

    pub fn column(&self, name: &str) -> Result<&Column, FrameError> {
        Ok(&self.columns[self.var_index(name)?])
    }

    pub fn column_at(&self, ix: usize) -> &Column {
        &self.columns[ix]
    }

    /// Numeric view of a study variable.
    pub fn study_values(&self, name: &str) -> Result<&[f64], FrameError> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => Err(FrameError::BadSchema(format!(
                "`{name}` is categorical, not a study variable"
            ))),
        }
    }

    /// Exact population total t_y of a study variable.
    pub fn total(&self, name: &str) -> Result<f64, FrameError> {
        Ok(ksum(self.study_values(name)?.iter().copied()))
    }

    pub fn value(&self, var_ix: usize, row: usize) -> Value {
        match &self.columns[var_ix] {
            Column::Categorical(v) => Value::Level(v[row]),
            Column::Numeric(v) => Value::Number(v[row]),
        }
    }

    /// Predictor record for one row, in predictor schema order.
    pub fn predictor_row(&self, row: usize) -> Vec<Value> {
        self.specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.role == VarRole::Predictor)
            .map(|(ix, _)| self.value(ix, row))
            .collect()
    }

    /// Load a frame from a UTF-8, comma-delimited, headered CSV file,
    /// validating every value against the schema. Empty cells and the
    /// literal `NA` are rejected as missing.
    pub fn load_csv(path: &Path, schema: Vec<VariableSpec>) -> Result<Self, FrameError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        let headers: Vec<String> = match rdr.headers() {
            Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => {
                h.iter().map(|s| s.to_string()).collect()
            }
            _ => return Err(FrameError::MissingHeader),
        };
        let mut col_of_spec = Vec::with_capacity(schema.len());
        for spec in &schema {
            let pos = headers
                .iter()
                .position(|h| *h == spec.name)
                .ok_or_else(|| FrameError::MissingColumn(spec.name.clone()))?;
            col_of_spec.push(pos);
        }
        let level_maps: Vec<Option<HashMap<&str, u16>>> = schema
            .iter()
            .map(|s| {
                s.levels().map(|ls| {
                    ls.iter()
                        .enumerate()
                        .map(|(i, l)| (l.as_str(), i as u16))
                        .collect()
                })
            })
            .collect();
        let mut columns: Vec<Column> = schema
            .iter()
            .map(|s| match s.kind {
                VarKind::Categorical { .. } => Column::Categorical(Vec::new()),
                VarKind::Numeric => Column::Numeric(Vec::new()),
            })
            .collect();
        for (row_ix, record) in rdr.records().enumerate() {
            let record = record?;
            for (spec_ix, spec) in schema.iter().enumerate() {
                let raw = record.get(col_of_spec[spec_ix]).unwrap_or("");
                if raw.is_empty() || raw == "NA" {
                    return Err(FrameError::MissingValue {
                        row: row_ix + 1,
                        column: spec.name.clone(),
                    });
                }
                match &mut columns[spec_ix] {
                    Column::Categorical(out) => {
                        let map = level_maps[spec_ix].as_ref().unwrap();
                        match map.get(raw) {
                            Some(&ix) => out.push(ix),
                            None => {
                                return Err(FrameError::UnknownLevel {
                                    column: spec.name.clone(),
                                    value: raw.to_string(),
                                })
                            }
                        }
                    }
                    Column::Numeric(out) => match raw.parse::<f64>() {
                        Ok(x) if x.is_finite() => out.push(x),
                        _ => {
                            return Err(FrameError::NonNumeric {
                                row: row_ix + 1,
                                column: spec.name.clone(),
                                value: raw.to_string(),
                            })
                        }
                    },
                }
            }
        }
        Self::new(schema, columns)
    }

    /// Write the frame as CSV. Numbers are printed with full round-trip
    /// precision so `load_csv(write_csv(f)) == f`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), FrameError> {
        let header: Vec<&str> = self.specs.iter().map(|s| s.name.as_str()).collect();
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for row in 0..self.n {
            line.clear();
            for (ix, spec) in self.specs.iter().enumerate() {
                if ix > 0 {
                    line.push(',');
                }
                match &self.columns[ix] {
                    Column::Categorical(v) => line.push_str(&spec.levels().unwrap()[v[row] as usize]),
                    Column::Numeric(v) => line.push_str(&format!("{}", v[row])),
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}
