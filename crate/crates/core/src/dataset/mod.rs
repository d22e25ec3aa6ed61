//! Structured statistical datasets and their encrypted form.

mod encrypt;
pub mod fixtures;
mod io;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mife::PLAINTEXT_BOUND;

pub use encrypt::{
    encrypt_dataset, keys_for_indices, lookup_salted, EncryptedCell, EncryptedDataset, EncryptionOutput, KeyMap,
    MaLists, NumericCell, RangeTable, SaltMap, EDS_MAGIC, LISTS_MAGIC,
};
pub use io::{load_csv, SchemaFile};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("schema must declare at least one variable")]
    EmptySchema,
    #[error("duplicate variable name {0:?}")]
    DuplicateVariable(String),
    #[error("invalid range [{lo}, {hi}] for variable {name:?}")]
    InvalidRange { name: String, lo: i64, hi: i64 },
    #[error("row {row} has {got} cells, schema has {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("row {row}, variable {name:?}: expected {expected} value")]
    KindMismatch { row: usize, name: String, expected: &'static str },
    #[error("row {row}, variable {name:?}: value {value} outside [{lo}, {hi}]")]
    OutOfRange { row: usize, name: String, value: i64, lo: i64, hi: i64 },
    #[error("too many numerical cells: {0}")]
    TooManyCells(usize),
    #[error("malformed {0} encoding")]
    Malformed(&'static str),
    #[error("unknown key index {0}")]
    UnknownKeyIndex(crate::crypto::Digest),
    #[error("input error: {0}")]
    Input(String),
}

/// Declared plaintext range of a numerical variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericRange {
    pub lo: i64,
    pub hi: i64,
}

impl NumericRange {
    pub fn new(lo: i64, hi: i64) -> Option<Self> {
        let valid = lo <= hi
            && lo.abs() < PLAINTEXT_BOUND
            && hi.abs() < PLAINTEXT_BOUND
            && hi - lo < PLAINTEXT_BOUND;
        valid.then_some(Self { lo, hi })
    }

    pub fn contains(&self, value: i64) -> bool {
        (self.lo..=self.hi).contains(&value)
    }

    /// Sensitivity of a sum over this variable: `hi − lo`.
    pub fn width(&self) -> i64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariableKind {
    Categorical,
    Ordinal,
    Numerical(NumericRange),
}

impl VariableKind {
    pub fn is_hashed(&self) -> bool {
        !matches!(self, VariableKind::Numerical(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub kind: VariableKind,
}

impl Variable {
    pub fn categorical(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: VariableKind::Categorical }
    }

    pub fn ordinal(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: VariableKind::Ordinal }
    }

    pub fn numerical(name: impl Into<String>, lo: i64, hi: i64) -> Self {
        let name = name.into();
        let kind = NumericRange::new(lo, hi)
            .map(VariableKind::Numerical)
            .unwrap_or_else(|| panic!("invalid range [{lo}, {hi}] for {name}"));
        Self { name, kind }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema(Vec<Variable>);

impl Schema {
    pub fn new(variables: Vec<Variable>) -> Result<Self, DatasetError> {
        if variables.is_empty() {
            return Err(DatasetError::EmptySchema);
        }
        let mut names = HashSet::new();
        for var in &variables {
            if !names.insert(var.name.as_str()) {
                return Err(DatasetError::DuplicateVariable(var.name.clone()));
            }
        }
        Ok(Self(variables))
    }

    pub fn variables(&self) -> &[Variable] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|v| v.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CellValue {
    Text(String),
    Number(i64),
}

impl From<&str> for CellValue {
    fn from(s: &str) -> Self {
        CellValue::Text(s.to_owned())
    }
}

impl From<i64> for CellValue {
    fn from(v: i64) -> Self {
        CellValue::Number(v)
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Text(s) => f.write_str(s),
            CellValue::Number(n) => write!(f, "{n}"),
        }
    }
}

/// A rectangular grid of cells conforming to a schema.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainDataset {
    schema: Schema,
    rows: Vec<Vec<CellValue>>,
}

impl PlainDataset {
    pub fn new(schema: Schema, rows: Vec<Vec<CellValue>>) -> Result<Self, DatasetError> {
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(DatasetError::RaggedRow { row: r, got: row.len(), expected: schema.len() });
            }
            for (cell, var) in row.iter().zip(schema.variables()) {
                match (&var.kind, cell) {
                    (VariableKind::Numerical(range), CellValue::Number(v)) => {
                        if !range.contains(*v) {
                            return Err(DatasetError::OutOfRange {
                                row: r,
                                name: var.name.clone(),
                                value: *v,
                                lo: range.lo,
                                hi: range.hi,
                            });
                        }
                    }
                    (VariableKind::Numerical(_), CellValue::Text(_)) => {
                        return Err(DatasetError::KindMismatch { row: r, name: var.name.clone(), expected: "numeric" })
                    }
                    (_, CellValue::Number(_)) => {
                        return Err(DatasetError::KindMismatch { row: r, name: var.name.clone(), expected: "text" })
                    }
                    (_, CellValue::Text(_)) => {}
                }
            }
        }
        let numeric = rows.len() * schema.variables().iter().filter(|v| !v.kind.is_hashed()).count();
        if numeric > u32::MAX as usize {
            return Err(DatasetError::TooManyCells(numeric));
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<CellValue>] {
        &self.rows
    }

    /// The rows selected by `keep`, under the same schema.
    pub fn subset(&self, keep: impl Fn(usize, &[CellValue]) -> bool) -> Self {
        let rows = self.rows.iter().enumerate().filter(|(i, r)| keep(*i, r)).map(|(_, r)| r.clone()).collect();
        Self { schema: self.schema.clone(), rows }
    }

    /// Plaintext evaluation of `SUM(variable) WHERE any text cell = value`,
    /// returning the sum and the number of contributing rows.
    pub fn plaintext_sum(&self, value: &str, variable: &str) -> Option<(i64, usize)> {
        let col = self.schema.position(variable)?;
        let mut total = 0;
        let mut count = 0;
        for row in &self.rows {
            let hit = row.iter().any(|c| matches!(c, CellValue::Text(t) if t == value));
            if let (true, CellValue::Number(x)) = (hit, &row[col]) {
                total += x;
                count += 1;
            }
        }
        Some((total, count))
    }
}
