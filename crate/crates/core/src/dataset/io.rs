//! CSV data with a TOML schema sidecar.
//!
//! ```toml
//! [[variable]]
//! name = "Diagnosis"
//! kind = "categorical"
//!
//! [[variable]]
//! name = "Age"
//! kind = "numerical"
//! lo = 0
//! hi = 120
//! ```
//!
//! The CSV header row must list the variables in schema order.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{CellValue, DatasetError, NumericRange, PlainDataset, Schema, Variable, VariableKind};

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Categorical,
    Ordinal,
    Numerical,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
struct VariableEntry {
    name: String,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<i64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct SchemaFile {
    variable: Vec<VariableEntry>,
}

impl SchemaFile {
    pub fn parse(text: &str) -> Result<Schema, DatasetError> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| DatasetError::Input(e.to_string()))?;
        file.into_schema()
    }

    pub fn into_schema(self) -> Result<Schema, DatasetError> {
        let vars = self
            .variable
            .into_iter()
            .map(|v| {
                let kind = match (v.kind, v.lo, v.hi) {
                    (KindTag::Categorical, None, None) => VariableKind::Categorical,
                    (KindTag::Ordinal, None, None) => VariableKind::Ordinal,
                    (KindTag::Numerical, Some(lo), Some(hi)) => VariableKind::Numerical(
                        NumericRange::new(lo, hi).ok_or(DatasetError::InvalidRange { name: v.name.clone(), lo, hi })?,
                    ),
                    (KindTag::Numerical, ..) => {
                        return Err(DatasetError::Input(format!("numerical variable {:?} needs lo and hi", v.name)))
                    }
                    _ => return Err(DatasetError::Input(format!("variable {:?} cannot carry a range", v.name))),
                };
                Ok(Variable { name: v.name, kind })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Schema::new(vars)
    }

    pub fn from_schema(schema: &Schema) -> Self {
        let variable = schema
            .variables()
            .iter()
            .map(|v| {
                let (kind, lo, hi) = match v.kind {
                    VariableKind::Categorical => (KindTag::Categorical, None, None),
                    VariableKind::Ordinal => (KindTag::Ordinal, None, None),
                    VariableKind::Numerical(r) => (KindTag::Numerical, Some(r.lo), Some(r.hi)),
                };
                VariableEntry { name: v.name.clone(), kind, lo, hi }
            })
            .collect();
        Self { variable }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }
}

pub fn load_csv<R: Read>(reader: R, schema: Schema) -> Result<PlainDataset, DatasetError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers().map_err(|e| DatasetError::Input(e.to_string()))?.clone();
    let names: Vec<&str> = schema.variables().iter().map(|v| v.name.as_str()).collect();
    if header.iter().collect::<Vec<_>>() != names {
        return Err(DatasetError::Input(format!("CSV header {:?} does not match schema {:?}", header, names)));
    }
    let mut rows = Vec::new();
    for (r, record) in csv.records().enumerate() {
        let record = record.map_err(|e| DatasetError::Input(e.to_string()))?;
        let row = record
            .iter()
            .zip(schema.variables())
            .map(|(field, var)| match var.kind {
                VariableKind::Numerical(_) => field.parse::<i64>().map(CellValue::Number).map_err(|_| {
                    DatasetError::KindMismatch { row: r, name: var.name.clone(), expected: "numeric" }
                }),
                _ => Ok(CellValue::Text(field.to_owned())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != schema.len() {
            return Err(DatasetError::RaggedRow { row: r, got: row.len(), expected: schema.len() });
        }
        rows.push(row);
    }
    PlainDataset::new(schema, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::table1;

    const TABLE_CSV: &str = "Diagnosis,Condition,Age,sbp,dbp\n\
        covid19,mild,27,110,75\n\
        flu,severe,58,123,60\n\
        flu,mild,41,120,80\n\
        pneumonia,critical,65,149,58\n";

    #[test]
    fn schema_round_trips_through_toml() {
        let schema = table1().schema().clone();
        let text = SchemaFile::from_schema(&schema).to_toml();
        assert_eq!(SchemaFile::parse(&text).unwrap(), schema);
    }

    #[test]
    fn loads_table_csv() {
        let schema = table1().schema().clone();
        assert_eq!(load_csv(TABLE_CSV.as_bytes(), schema).unwrap(), table1());
    }

    #[test]
    fn rejects_bad_inputs() {
        let schema = table1().schema().clone();
        let swapped = TABLE_CSV.replacen("Age,sbp", "sbp,Age", 1);
        assert!(matches!(load_csv(swapped.as_bytes(), schema.clone()), Err(DatasetError::Input(_))));
        let text_in_number = TABLE_CSV.replacen("27", "old", 1);
        assert!(matches!(load_csv(text_in_number.as_bytes(), schema.clone()), Err(DatasetError::KindMismatch { .. })));
        let out_of_range = TABLE_CSV.replacen("65", "650", 1);
        assert!(matches!(load_csv(out_of_range.as_bytes(), schema), Err(DatasetError::OutOfRange { .. })));

        let missing_range = "[[variable]]\nname = \"Age\"\nkind = \"numerical\"\n";
        assert!(SchemaFile::parse(missing_range).is_err());
        let bad_range = "[[variable]]\nname = \"Age\"\nkind = \"numerical\"\nlo = 5\nhi = 1\n";
        assert!(matches!(SchemaFile::parse(bad_range), Err(DatasetError::InvalidRange { .. })));
    }
}
