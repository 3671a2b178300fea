use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::{glob_match, CohortTable, PrevalenceReport};
use crate::{Error, Result};

/// Window and horizon arithmetic uses fixed 365-day years.
pub const DAYS_PER_YEAR: u32 = 365;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceFilter {
    pub dx_min_frac: f64,
    pub med_min_frac: f64,
    /// Kept regardless of prevalence (e.g. approved cancer drugs).
    pub forced_medications: BTreeSet<String>,
    /// Codes or `*` patterns removed regardless of prevalence.
    pub excluded_codes: Vec<String>,
    /// Exempt from `excluded_codes` (still subject to prevalence).
    pub allowed_codes: BTreeSet<String>,
}

impl Default for PrevalenceFilter {
    fn default() -> Self {
        PrevalenceFilter {
            dx_min_frac: 0.01,
            med_min_frac: 0.005,
            forced_medications: BTreeSet::new(),
            excluded_codes: Vec::new(),
            allowed_codes: BTreeSet::new(),
        }
    }
}

impl PrevalenceFilter {
    fn excluded(&self, code: &str) -> bool {
        !self.allowed_codes.contains(code) && self.excluded_codes.iter().any(|p| glob_match(p, code))
    }
}

fn patient_counts<'a>(table: &'a CohortTable, pick: impl Fn(&'a super::EncounterRecord) -> &'a [String]) -> HashMap<&'a str, usize> {
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for enc in &table.encounters {
        for code in pick(enc) {
            if seen.insert((enc.patient_id.as_str(), code.as_str())) {
                *counts.entry(code.as_str()).or_default() += 1;
            }
        }
    }
    counts
}

/// Removes rare diagnoses and medications. Prevalence is the fraction of
/// cohort patients with at least one occurrence; thresholds are inclusive.
pub fn filter_by_prevalence(mut table: CohortTable, filter: &PrevalenceFilter) -> CohortTable {
    let n = table.n_patients();
    let keep_frac = |count: usize, frac: f64| n > 0 && count as f64 / n as f64 >= frac;

    let dx_counts = patient_counts(&table, |e| &e.diagnoses);
    let med_counts = patient_counts(&table, |e| &e.medications);
    let keep_dx: BTreeSet<String> = dx_counts
        .iter()
        .filter(|(c, &k)| keep_frac(k, filter.dx_min_frac) && !filter.excluded(c))
        .map(|(c, _)| c.to_string())
        .collect();
    let keep_med: BTreeSet<String> = med_counts
        .iter()
        .filter(|(c, &k)| {
            (keep_frac(k, filter.med_min_frac) || filter.forced_medications.contains(**c)) && !filter.excluded(c)
        })
        .map(|(c, _)| c.to_string())
        .collect();
    let mut dx_removed: Vec<String> = dx_counts
        .keys()
        .filter(|c| !keep_dx.contains(**c))
        .map(|c| c.to_string())
        .collect();
    let mut med_removed: Vec<String> = med_counts
        .keys()
        .filter(|c| !keep_med.contains(**c))
        .map(|c| c.to_string())
        .collect();
    dx_removed.sort();
    med_removed.sort();

    for enc in &mut table.encounters {
        enc.diagnoses.retain(|c| keep_dx.contains(c));
        enc.medications.retain(|c| keep_med.contains(c));
    }
    table.report.prevalence = Some(PrevalenceReport {
        n_patients: n,
        diagnoses_removed: dx_removed,
        medications_removed: med_removed,
        diagnoses_retained: keep_dx.len(),
        medications_retained: keep_med.len(),
        empty: keep_dx.is_empty() || keep_med.is_empty(),
    });
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRule {
    pub horizon_years: u32,
    pub window_years: u32,
}

impl Default for OutcomeRule {
    fn default() -> Self {
        OutcomeRule {
            horizon_years: 5,
            window_years: 1,
        }
    }
}

/// Labels each patient (1 = died within the horizon after diagnosis) and keeps
/// only encounters inside `[diagnosis_date, diagnosis_date + window]`.
pub fn assign_outcomes(mut table: CohortTable, rule: OutcomeRule) -> Result<CohortTable> {
    let horizon = Duration::days(i64::from(rule.horizon_years * DAYS_PER_YEAR));
    let window = Duration::days(i64::from(rule.window_years * DAYS_PER_YEAR));

    let with_encounters: HashSet<&str> = table.encounters.iter().map(|e| e.patient_id.as_str()).collect();
    let mut labels = BTreeMap::new();
    for (id, d) in &table.demographics {
        let label = match (d.diagnosis_date, d.death_date) {
            (Some(dx), Some(death)) => u8::from(death - dx <= horizon),
            (Some(_), None) => 0,
            (None, None) if !with_encounters.contains(id.as_str()) => 0,
            (None, _) => return Err(Error::MissingDiagnosisDate(id.clone())),
        };
        labels.insert(id.clone(), label);
    }

    let before = table.encounters.len();
    let demographics = &table.demographics;
    table.encounters.retain(|e| {
        let dx = demographics[&e.patient_id]
            .diagnosis_date
            .expect("checked above: patients with encounters have a diagnosis date");
        e.date >= dx && e.date <= dx + window
    });
    table.report.window_dropped_encounters += before - table.encounters.len();
    table.report.days_per_year = DAYS_PER_YEAR;
    table.labels = Some(labels);
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{CohortReport, CovariateVector, EncounterRecord, PatientDemographics};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn date(days: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2010, 1, 1).unwrap() + Duration::days(days)
    }

    fn patient(id: &str, death_after: Option<i64>) -> PatientDemographics {
        PatientDemographics {
            patient_id: id.into(),
            diagnosis_date: Some(date(0)),
            death_date: death_after.map(date),
            age_at_diagnosis: 60.0,
            sex: None,
            race: None,
            marital_status: None,
            insurance: None,
            zip_code: String::new(),
        }
    }

    fn cohort(n_patients: usize, encounters: Vec<(usize, i64, Vec<&str>, Vec<&str>)>) -> CohortTable {
        let demographics: BTreeMap<String, PatientDemographics> = (0..n_patients)
            .map(|i| (format!("p{i:03}"), patient(&format!("p{i:03}"), None)))
            .collect();
        let covariates = demographics
            .iter()
            .map(|(k, d)| (k.clone(), CovariateVector::from_demographics(d, 0.0)))
            .collect();
        CohortTable {
            encounters: encounters
                .into_iter()
                .enumerate()
                .map(|(n, (p, day, dx, med))| EncounterRecord {
                    patient_id: format!("p{p:03}"),
                    encounter_id: format!("e{n}"),
                    date: date(day),
                    diagnoses: dx.into_iter().map(String::from).collect(),
                    medications: med.into_iter().map(String::from).collect(),
                })
                .collect(),
            demographics,
            covariates,
            labels: None,
            report: CohortReport::default(),
        }
    }

    #[test]
    fn one_percent_boundary_is_inclusive() {
        let t = cohort(100, vec![(0, 1, vec!["A"], vec!["x"])]);
        let f = PrevalenceFilter::default();
        let out = filter_by_prevalence(t, &f);
        assert_eq!(out.encounters[0].diagnoses, vec!["A"]);
        // 1 of 100 = 1% >= 0.5%: x kept as well
        assert_eq!(out.encounters[0].medications, vec!["x"]);
    }

    #[test]
    fn below_threshold_removed_unless_forced() {
        let mut enc = vec![(0, 1, vec!["A"], vec!["rare"])];
        for p in 0..10 {
            enc.push((p, 2, vec!["A"], vec!["common"]));
        }
        let t = cohort(250, enc);
        // rare: 1/250 = 0.4% < 0.5%
        let f = PrevalenceFilter::default();
        let out = filter_by_prevalence(t.clone(), &f);
        assert!(out.encounters[0].medications.is_empty());
        assert_eq!(out.report.prevalence.as_ref().unwrap().medications_removed, vec!["rare"]);

        let forced = PrevalenceFilter {
            forced_medications: ["rare".to_string()].into(),
            ..Default::default()
        };
        let out = filter_by_prevalence(t, &forced);
        assert_eq!(out.encounters[0].medications, vec!["rare"]);
    }

    #[test]
    fn exclusions_and_allow_list() {
        let t = cohort(10, vec![(0, 1, vec!["V10.3", "V86.0", "E849", "401.9"], vec!["saline", "x"])]);
        let f = PrevalenceFilter {
            excluded_codes: vec!["V*".into(), "E*".into(), "saline".into()],
            allowed_codes: ["V86.0".to_string()].into(),
            ..Default::default()
        };
        let out = filter_by_prevalence(t, &f);
        assert_eq!(out.encounters[0].diagnoses, vec!["V86.0", "401.9"]);
        assert_eq!(out.encounters[0].medications, vec!["x"]);
    }

    #[test]
    fn all_prevalent_is_identity() {
        let t = cohort(2, vec![(0, 1, vec!["A"], vec!["x"]), (1, 1, vec!["B"], vec!["y"])]);
        let out = filter_by_prevalence(t.clone(), &PrevalenceFilter::default());
        assert_eq!(out.encounters, t.encounters);
        assert!(!out.report.prevalence.unwrap().empty);
    }

    #[test]
    fn empty_result_is_flagged() {
        let t = cohort(1000, vec![(0, 1, vec!["A"], vec!["x"])]);
        let out = filter_by_prevalence(t, &PrevalenceFilter::default());
        assert!(out.report.prevalence.unwrap().empty);
    }

    #[test]
    fn outcome_labels() {
        let mut t = cohort(3, vec![]);
        // 4.9 years
        t.demographics.get_mut("p000").unwrap().death_date = Some(date((4.9 * 365.0) as i64));
        t.demographics.get_mut("p001").unwrap().death_date = Some(date(5 * 365 + 1));
        let out = assign_outcomes(t, OutcomeRule::default()).unwrap();
        let labels = out.labels.unwrap();
        assert_eq!(labels["p000"], 1);
        assert_eq!(labels["p001"], 0);
        assert_eq!(labels["p002"], 0);
    }

    #[test]
    fn encounters_outside_window_are_dropped() {
        let t = cohort(1, vec![(0, 400, vec!["A"], vec![]), (0, 365, vec!["B"], vec![]), (0, -1, vec!["C"], vec![])]);
        let out = assign_outcomes(t, OutcomeRule::default()).unwrap();
        assert_eq!(out.encounters.len(), 1);
        assert_eq!(out.encounters[0].diagnoses, vec!["B"]);
        assert_eq!(out.report.window_dropped_encounters, 2);
    }

    #[test]
    fn encounter_without_diagnosis_date_is_an_error() {
        let mut t = cohort(1, vec![(0, 1, vec!["A"], vec![])]);
        t.demographics.get_mut("p000").unwrap().diagnosis_date = None;
        assert!(matches!(
            assign_outcomes(t, OutcomeRule::default()),
            Err(Error::MissingDiagnosisDate(id)) if id == "p000"
        ));
    }

    fn arb_cohort() -> impl Strategy<Value = CohortTable> {
        let enc = (0usize..30, 0i64..800, proptest::collection::vec(0u8..6, 0..4), proptest::collection::vec(0u8..6, 0..4));
        (proptest::collection::vec(enc, 0..40), proptest::collection::vec(proptest::option::of(0i64..4000), 30)).prop_map(
            |(encs, deaths)| {
                let mut t = cohort(
                    30,
                    encs.into_iter()
                        .map(|(p, d, dx, med)| {
                            let dx: Vec<&str> = dx.iter().map(|c| ["A", "B", "C", "D", "E", "F"][*c as usize]).collect();
                            let med: Vec<&str> = med.iter().map(|c| ["u", "v", "w", "x", "y", "z"][*c as usize]).collect();
                            let mut dx = dx;
                            dx.dedup();
                            let mut med = med;
                            med.dedup();
                            (p, d, dx, med)
                        })
                        .collect(),
                );
                for (i, d) in deaths.into_iter().enumerate() {
                    t.demographics.get_mut(&format!("p{i:03}")).unwrap().death_date = d.map(date);
                }
                t
            },
        )
    }

    proptest! {
        #[test]
        fn prevalence_filter_is_idempotent(t in arb_cohort(), dx in 0.01f64..0.2, med in 0.01f64..0.2) {
            let f = PrevalenceFilter { dx_min_frac: dx, med_min_frac: med, ..Default::default() };
            let once = filter_by_prevalence(t, &f);
            let twice = filter_by_prevalence(once.clone(), &f);
            prop_assert_eq!(&once.encounters, &twice.encounters);
        }

        #[test]
        fn labels_match_brute_force_and_window_keeps_patients(t in arb_cohort()) {
            let expected: usize = t.demographics.values().filter(|d| match (d.diagnosis_date, d.death_date) {
                (Some(a), Some(b)) => (b - a).num_days() <= 5 * 365,
                _ => false,
            }).count();
            let demo = t.demographics.clone();
            let cov = t.covariates.clone();
            let out = assign_outcomes(t, OutcomeRule::default()).unwrap();
            let labels = out.labels.as_ref().unwrap();
            prop_assert_eq!(labels.len(), demo.len());
            prop_assert_eq!(labels.values().map(|&l| l as usize).sum::<usize>(), expected);
            prop_assert_eq!(&out.demographics, &demo);
            prop_assert_eq!(&out.covariates, &cov);
        }
    }
}
