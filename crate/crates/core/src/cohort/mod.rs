//! Cohort ingestion: encounter and demographic tables, medication name
//! normalization, prevalence filtering, and outcome labels.

mod filter;
mod load;
mod medmap;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use filter::{assign_outcomes, filter_by_prevalence, OutcomeRule, PrevalenceFilter, DAYS_PER_YEAR};
pub use load::{load_tables, read_code_list};
pub use medmap::{glob_match, normalize_medication_names, normalize_with, MappingRule, MedicationMap};

/// One encounter with the diagnosis codes and medication names recorded at it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub patient_id: String,
    pub encounter_id: String,
    pub date: NaiveDate,
    pub diagnoses: Vec<String>,
    pub medications: Vec<String>,
}

/// Categorical fields use `None` for the explicit "missing" level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDemographics {
    pub patient_id: String,
    /// Earliest cancer diagnosis.
    pub diagnosis_date: Option<NaiveDate>,
    pub death_date: Option<NaiveDate>,
    pub age_at_diagnosis: f64,
    pub sex: Option<String>,
    pub race: Option<String>,
    pub marital_status: Option<String>,
    pub insurance: Option<String>,
    pub zip_code: String,
}

/// Six social-determinant covariates. Missing categorical values fall into the
/// 0 level of each indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector {
    pub is_male: f64,
    pub is_african_american: f64,
    pub is_married: f64,
    pub is_medicaid_medicare: f64,
    pub age_at_diagnosis: f64,
    pub median_household_income: f64,
}

impl CovariateVector {
    pub const NAMES: [&'static str; 6] = [
        "is_male",
        "is_african_american",
        "is_married",
        "is_medicaid_medicare",
        "age_at_diagnosis",
        "median_household_income",
    ];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.is_male,
            self.is_african_american,
            self.is_married,
            self.is_medicaid_medicare,
            self.age_at_diagnosis,
            self.median_household_income,
        ]
    }

    pub fn from_demographics(d: &PatientDemographics, income: f64) -> Self {
        let indicator = |v: &Option<String>, accept: &dyn Fn(&str) -> bool| match v {
            Some(s) if accept(&s.trim().to_ascii_lowercase()) => 1.0,
            _ => 0.0,
        };
        CovariateVector {
            is_male: indicator(&d.sex, &|s| s == "m" || s == "male"),
            is_african_american: indicator(&d.race, &|s| {
                matches!(
                    s,
                    "black" | "african american" | "african-american" | "black or african american"
                )
            }),
            is_married: indicator(&d.marital_status, &|s| s == "married"),
            is_medicaid_medicare: indicator(&d.insurance, &|s| {
                s.contains("medicaid") || s.contains("medicare")
            }),
            age_at_diagnosis: d.age_at_diagnosis,
            median_household_income: income,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceReport {
    pub n_patients: usize,
    pub diagnoses_removed: Vec<String>,
    pub medications_removed: Vec<String>,
    pub diagnoses_retained: usize,
    pub medications_retained: usize,
    /// Set when filtering left no diagnosis or no medication.
    pub empty: bool,
}

/// Bookkeeping accumulated across ingestion stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub rejected_rows: Vec<RejectedRow>,
    pub income_imputed: usize,
    pub imputed_income_value: Option<f64>,
    pub window_dropped_encounters: usize,
    pub prevalence: Option<PrevalenceReport>,
    pub days_per_year: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub encounters: Vec<EncounterRecord>,
    pub demographics: BTreeMap<String, PatientDemographics>,
    pub covariates: BTreeMap<String, CovariateVector>,
    /// `None` until [`assign_outcomes`] runs; afterwards defined for every patient.
    pub labels: Option<BTreeMap<String, u8>>,
    pub report: CohortReport,
}

impl CohortTable {
    pub fn n_patients(&self) -> usize {
        self.demographics.len()
    }

    /// Patient ids in lexicographic order (the tensor's patient axis order).
    pub fn patient_ids(&self) -> Vec<String> {
        self.demographics.keys().cloned().collect()
    }

    /// Keeps only the listed patients, dropping their encounters too.
    pub fn retain_patients(&mut self, keep: &std::collections::BTreeSet<String>) {
        self.encounters.retain(|e| keep.contains(&e.patient_id));
        self.demographics.retain(|k, _| keep.contains(k));
        self.covariates.retain(|k, _| keep.contains(k));
        if let Some(labels) = self.labels.as_mut() {
            labels.retain(|k, _| keep.contains(k));
        }
    }

    pub fn save_json(&self, path: &std::path::Path) -> crate::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| crate::Error::io(path, e))
    }

    pub fn load_json(path: &std::path::Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo(sex: Option<&str>, race: Option<&str>, marital: Option<&str>, ins: Option<&str>) -> PatientDemographics {
        PatientDemographics {
            patient_id: "p".into(),
            diagnosis_date: None,
            death_date: None,
            age_at_diagnosis: 50.0,
            sex: sex.map(String::from),
            race: race.map(String::from),
            marital_status: marital.map(String::from),
            insurance: ins.map(String::from),
            zip_code: "60611".into(),
        }
    }

    #[test]
    fn indicators_follow_category_levels() {
        let c = CovariateVector::from_demographics(
            &demo(Some("Male"), Some("Black"), Some("Married"), Some("Medicare Advantage")),
            42_000.0,
        );
        assert_eq!(c.to_array(), [1.0, 1.0, 1.0, 1.0, 50.0, 42_000.0]);

        let c = CovariateVector::from_demographics(&demo(Some("F"), Some("White"), Some("Single"), Some("Private")), 1.0);
        assert_eq!(&c.to_array()[..4], &[0.0; 4]);
    }

    #[test]
    fn missing_categories_map_to_zero() {
        let c = CovariateVector::from_demographics(&demo(None, None, None, None), 1.0);
        assert_eq!(&c.to_array()[..4], &[0.0; 4]);
    }
}
