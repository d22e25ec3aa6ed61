//! The four-patient motivating dataset and datasets derived from it.

use super::{CellValue, PlainDataset, Schema, Variable};

/// Diagnosis, Condition, Age, sbp, dbp for Dennis, Shawn, Dirk and Scottie
/// (patient names are not part of the stored dataset).
pub const TABLE1_ROWS: [(&str, &str, i64, i64, i64); 4] = [
    ("covid19", "mild", 27, 110, 75),
    ("flu", "severe", 58, 123, 60),
    ("flu", "mild", 41, 120, 80),
    ("pneumonia", "critical", 65, 149, 58),
];

pub const AGE_RANGE: (i64, i64) = (0, 120);
pub const SBP_RANGE: (i64, i64) = (0, 250);
pub const DBP_RANGE: (i64, i64) = (0, 120);

fn base_schema() -> Vec<Variable> {
    vec![
        Variable::categorical("Diagnosis"),
        Variable::ordinal("Condition"),
        Variable::numerical("Age", AGE_RANGE.0, AGE_RANGE.1),
        Variable::numerical("sbp", SBP_RANGE.0, SBP_RANGE.1),
        Variable::numerical("dbp", DBP_RANGE.0, DBP_RANGE.1),
    ]
}

fn base_row(row: &(&str, &str, i64, i64, i64)) -> Vec<CellValue> {
    vec![row.0.into(), row.1.into(), row.2.into(), row.3.into(), row.4.into()]
}

pub fn table1() -> PlainDataset {
    let schema = Schema::new(base_schema()).expect("static schema");
    PlainDataset::new(schema, TABLE1_ROWS.iter().map(base_row).collect()).expect("static rows")
}

/// Table 1 plus a categorical `Site` column equal to `central` for every
/// row and a numerical `Count` column in `[0, 1]` equal to 1, so that
/// "all patients" and "number of patients" are expressible as queries.
pub fn table1_extended() -> PlainDataset {
    let mut vars = base_schema();
    vars.push(Variable::categorical("Site"));
    vars.push(Variable::numerical("Count", 0, 1));
    let schema = Schema::new(vars).expect("static schema");
    let rows = TABLE1_ROWS
        .iter()
        .map(|r| {
            let mut row = base_row(r);
            row.push("central".into());
            row.push(1.into());
            row
        })
        .collect();
    PlainDataset::new(schema, rows).expect("static rows")
}

/// Distinct categorical and ordinal values of Table 1, in first-seen order.
pub fn table1_value_terms() -> Vec<&'static str> {
    let mut terms = Vec::new();
    for (d, c, ..) in TABLE1_ROWS {
        for t in [d, c] {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
    }
    terms
}

pub const TABLE1_NUMERIC_VARIABLES: [&str; 3] = ["Age", "sbp", "dbp"];
