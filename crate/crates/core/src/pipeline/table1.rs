use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::tensor::TensorStats;

/// Statistics of one cohort under both correspondence modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Column {
    pub cohort: String,
    pub all: TensorStats,
    pub ind: TensorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub columns: Vec<Table1Column>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub text: String,
}

impl Table1 {
    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

type Row = (&'static str, fn(&TensorStats) -> String);

const ROWS: [Row; 8] = [
    ("Patients", |s| s.n_patients.to_string()),
    ("Diagnoses", |s| s.n_diagnoses.to_string()),
    ("Medications", |s| s.n_medications.to_string()),
    ("Dx-med pairs", |s| s.n_dx_med_pairs.to_string()),
    ("Mean age at diagnosis", |s| format!("{:.1}", s.mean_age)),
    ("Deaths within horizon", |s| s.deaths_at_horizon.to_string()),
    ("Median co-occurrences per pt.", |s| format!("{}", s.median_cooccurrences_per_patient)),
    ("Total co-occurrences", |s| s.total_cooccurrences.to_string()),
];

/// Side-by-side "All" and "Ind." columns per cohort. Empty tensors give a
/// zero column and a warning.
pub fn report_table1(columns: &[Table1Column]) -> Table1 {
    let mut warnings = Vec::new();
    for c in columns {
        for (mode, s) in [("all", &c.all), ("ind", &c.ind)] {
            if s.n_patients == 0 {
                warnings.push(format!("cohort `{}`: {mode} tensor is empty", c.cohort));
            }
        }
    }
    let mut text = String::from("\t");
    text.push_str(&columns.iter().map(|c| format!("{}\t", c.cohort)).collect::<Vec<_>>().join("\t"));
    text.push('\n');
    text.push('\t');
    text.push_str(&vec!["All\tInd."; columns.len()].join("\t"));
    text.push('\n');
    for (name, f) in ROWS {
        text.push_str(name);
        for c in columns {
            let _ = write!(text, "\t{}\t{}", f(&c.all), f(&c.ind));
        }
        text.push('\n');
    }
    for w in &warnings {
        let _ = writeln!(text, "# warning: {w}");
    }
    Table1 {
        columns: columns.to_vec(),
        warnings,
        text,
    }
}
