use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;

use super::{CohortReport, CohortTable, CovariateVector, EncounterRecord, PatientDemographics, RejectedRow};
use crate::{Error, Result};

struct Table {
    columns: HashMap<String, usize>,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table(path: &Path, required: &[&str]) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let columns: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_ascii_lowercase(), i))
        .collect();
    for col in required {
        if !columns.contains_key(*col) {
            return Err(Error::MissingColumn {
                path: path.to_path_buf(),
                column: (*col).to_string(),
            });
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, record));
    }
    Ok(Table { columns, rows })
}

impl Table {
    fn get<'a>(&self, rec: &'a csv::StringRecord, col: &str) -> &'a str {
        self.columns
            .get(col)
            .and_then(|&i| rec.get(i))
            .unwrap_or("")
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

fn optional(s: &str) -> Option<String> {
    if s.is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}

/// Loads the encounter, demographics, and income tables into an unlabeled
/// cohort. Rows with unparseable mandatory fields are skipped and listed in
/// the report; structural problems (missing columns, duplicate patients,
/// encounters of unknown patients) are errors.
pub fn load_tables(encounter_path: &Path, demographics_path: &Path, income_path: &Path) -> Result<CohortTable> {
    let mut report = CohortReport {
        days_per_year: super::DAYS_PER_YEAR,
        ..Default::default()
    };
    let reject = |report: &mut CohortReport, path: &Path, line: usize, reason: String| {
        report.rejected_rows.push(RejectedRow {
            file: path.display().to_string(),
            line,
            reason,
        });
    };

    let income_table = read_table(income_path, &["zip", "median_income"])?;
    let mut income: HashMap<String, f64> = HashMap::new();
    for (line, rec) in &income_table.rows {
        let zip = income_table.get(rec, "zip");
        match income_table.get(rec, "median_income").parse::<f64>() {
            Ok(v) if v.is_finite() && !zip.is_empty() => {
                if income.insert(zip.to_string(), v).is_some() {
                    reject(&mut report, income_path, *line, format!("duplicate zip `{zip}`"));
                }
            }
            _ => reject(&mut report, income_path, *line, "unparseable zip or median_income".into()),
        }
    }

    let demo_table = read_table(
        demographics_path,
        &[
            "patient_id",
            "diagnosis_date",
            "death_date",
            "age",
            "sex",
            "race",
            "marital_status",
            "insurance",
            "zip",
        ],
    )?;
    let mut demographics = BTreeMap::new();
    for (line, rec) in &demo_table.rows {
        let get = |c| demo_table.get(rec, c);
        let patient_id = get("patient_id");
        if patient_id.is_empty() {
            reject(&mut report, demographics_path, *line, "empty patient_id".into());
            continue;
        }
        let diagnosis_date = match get("diagnosis_date") {
            "" => None,
            s => match parse_date(s) {
                Some(d) => Some(d),
                None => {
                    reject(&mut report, demographics_path, *line, format!("bad diagnosis_date `{s}`"));
                    continue;
                }
            },
        };
        let death_date = match get("death_date") {
            "" => None,
            s => match parse_date(s) {
                Some(d) => Some(d),
                None => {
                    reject(&mut report, demographics_path, *line, format!("bad death_date `{s}`"));
                    continue;
                }
            },
        };
        if let (Some(dx), Some(death)) = (diagnosis_date, death_date) {
            if death < dx {
                reject(&mut report, demographics_path, *line, "death_date precedes diagnosis_date".into());
                continue;
            }
        }
        let age = match get("age").parse::<f64>() {
            Ok(a) if a.is_finite() && a >= 0.0 => a,
            _ => {
                reject(&mut report, demographics_path, *line, format!("bad age `{}`", get("age")));
                continue;
            }
        };
        if demographics.contains_key(patient_id) {
            return Err(Error::DuplicatePatient {
                path: demographics_path.to_path_buf(),
                line: *line,
                patient_id: patient_id.to_string(),
            });
        }
        demographics.insert(
            patient_id.to_string(),
            PatientDemographics {
                patient_id: patient_id.to_string(),
                diagnosis_date,
                death_date,
                age_at_diagnosis: age,
                sex: optional(get("sex")),
                race: optional(get("race")),
                marital_status: optional(get("marital_status")),
                insurance: optional(get("insurance")),
                zip_code: get("zip").to_string(),
            },
        );
    }

    // Unmatched zip codes receive the cohort median of matched patients.
    let mut matched: Vec<f64> = demographics
        .values()
        .filter_map(|d| income.get(&d.zip_code).copied())
        .collect();
    matched.sort_by(f64::total_cmp);
    let cohort_median = if matched.is_empty() { 0.0 } else { crate::median_sorted(&matched) };
    let mut covariates = BTreeMap::new();
    for (id, d) in &demographics {
        let value = match income.get(&d.zip_code) {
            Some(&v) => v,
            None => {
                report.income_imputed += 1;
                cohort_median
            }
        };
        covariates.insert(id.clone(), CovariateVector::from_demographics(d, value));
    }
    if report.income_imputed > 0 {
        report.imputed_income_value = Some(cohort_median);
    }

    let enc_table = read_table(encounter_path, &["patient_id", "encounter_id", "date", "kind", "code"])?;
    let mut encounters: Vec<EncounterRecord> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (line, rec) in &enc_table.rows {
        let get = |c| enc_table.get(rec, c);
        let patient_id = get("patient_id");
        let encounter_id = get("encounter_id");
        let code = get("code");
        if patient_id.is_empty() || encounter_id.is_empty() || code.is_empty() {
            reject(&mut report, encounter_path, *line, "empty patient_id, encounter_id, or code".into());
            continue;
        }
        let Some(date) = parse_date(get("date")) else {
            reject(&mut report, encounter_path, *line, format!("bad date `{}`", get("date")));
            continue;
        };
        let is_dx = match get("kind").to_ascii_uppercase().as_str() {
            "DX" => true,
            "MED" => false,
            other => {
                reject(&mut report, encounter_path, *line, format!("unknown kind `{other}`"));
                continue;
            }
        };
        if !demographics.contains_key(patient_id) {
            return Err(Error::UnknownPatient {
                path: encounter_path.to_path_buf(),
                line: *line,
                patient_id: patient_id.to_string(),
            });
        }
        let idx = match by_id.get(encounter_id) {
            Some(&i) => {
                let e = &encounters[i];
                if e.patient_id != patient_id || e.date != date {
                    reject(
                        &mut report,
                        encounter_path,
                        *line,
                        format!("encounter `{encounter_id}` conflicts with an earlier row"),
                    );
                    continue;
                }
                i
            }
            None => {
                by_id.insert(encounter_id.to_string(), encounters.len());
                encounters.push(EncounterRecord {
                    patient_id: patient_id.to_string(),
                    encounter_id: encounter_id.to_string(),
                    date,
                    diagnoses: Vec::new(),
                    medications: Vec::new(),
                });
                encounters.len() - 1
            }
        };
        let list = if is_dx {
            &mut encounters[idx].diagnoses
        } else {
            &mut encounters[idx].medications
        };
        if !list.iter().any(|c| c == code) {
            list.push(code.to_string());
        }
    }

    Ok(CohortTable {
        encounters,
        demographics,
        covariates,
        labels: None,
        report,
    })
}

/// Reads a one-code-per-line file. Blank lines and `#` comments are skipped.
pub fn read_code_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    const DEMO: &str = "patient_id,diagnosis_date,death_date,age,sex,race,marital_status,insurance,zip\n\
        p1,2010-01-01,,60,M,White,Married,Private,11111\n\
        p2,2010-02-01,2012-01-01,70,F,Black,,Medicare,11111\n\
        p3,2010-03-01,,55,F,,Single,,11111\n";
    const INCOME: &str = "zip,median_income\n11111,50000\n";

    #[test]
    fn joins_income_onto_zip() {
        let dir = tempfile::tempdir().unwrap();
        let enc = write(dir.path(), "e.csv", "patient_id,encounter_id,date,kind,code\np1,e1,2010-01-05,DX,A\np1,e1,2010-01-05,MED,x\n");
        let demo = write(dir.path(), "d.csv", DEMO);
        let inc = write(dir.path(), "i.csv", INCOME);
        let t = load_tables(&enc, &demo, &inc).unwrap();
        assert_eq!(t.n_patients(), 3);
        for c in t.covariates.values() {
            assert_eq!(c.median_household_income, 50_000.0);
        }
        assert_eq!(t.encounters.len(), 1);
        assert_eq!(t.encounters[0].diagnoses, vec!["A"]);
        assert_eq!(t.encounters[0].medications, vec!["x"]);
        assert!(t.labels.is_none());
    }

    #[test]
    fn empty_marital_status_is_not_married() {
        let dir = tempfile::tempdir().unwrap();
        let enc = write(dir.path(), "e.csv", "patient_id,encounter_id,date,kind,code\n");
        let demo = write(dir.path(), "d.csv", DEMO);
        let inc = write(dir.path(), "i.csv", INCOME);
        let t = load_tables(&enc, &demo, &inc).unwrap();
        assert_eq!(t.covariates["p2"].is_married, 0.0);
        assert_eq!(t.covariates["p2"].is_african_american, 1.0);
        assert_eq!(t.covariates["p1"].is_married, 1.0);
    }

    #[test]
    fn unknown_patient_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let enc = write(
            dir.path(),
            "e.csv",
            "patient_id,encounter_id,date,kind,code\np1,e1,2010-01-05,DX,A\nzz,e2,2010-01-05,DX,A\n",
        );
        let demo = write(dir.path(), "d.csv", DEMO);
        let inc = write(dir.path(), "i.csv", INCOME);
        match load_tables(&enc, &demo, &inc) {
            Err(Error::UnknownPatient { line, patient_id, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(patient_id, "zz");
            }
            other => panic!("expected unknown patient error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_patient_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let enc = write(dir.path(), "e.csv", "patient_id,encounter_id,date,kind,code\n");
        let demo = write(dir.path(), "d.csv", &format!("{DEMO}p1,2010-01-01,,60,M,,,,11111\n"));
        let inc = write(dir.path(), "i.csv", INCOME);
        assert!(matches!(
            load_tables(&enc, &demo, &inc),
            Err(Error::DuplicatePatient { line: 5, .. })
        ));
    }

    #[test]
    fn missing_column_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let enc = write(dir.path(), "e.csv", "patient_id,encounter_id,date,code\n");
        let demo = write(dir.path(), "d.csv", DEMO);
        let inc = write(dir.path(), "i.csv", INCOME);
        assert!(matches!(
            load_tables(&enc, &demo, &inc),
            Err(Error::MissingColumn { column, .. }) if column == "kind"
        ));
        let missing = dir.path().join("nope.csv");
        assert!(matches!(load_tables(&missing, &demo, &inc), Err(Error::Io { .. })));
    }

    #[test]
    fn bad_rows_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let enc = write(
            dir.path(),
            "e.csv",
            "patient_id,encounter_id,date,kind,code\np1,e1,not-a-date,DX,A\np1,e2,2010-01-05,LAB,A\n",
        );
        let demo = write(dir.path(), "d.csv", &format!("{DEMO}p4,2010-01-01,,-3,M,,,,11111\n"));
        let inc = write(dir.path(), "i.csv", INCOME);
        let t = load_tables(&enc, &demo, &inc).unwrap();
        let lines: Vec<usize> = t.report.rejected_rows.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![5, 2, 3]);
        assert_eq!(t.n_patients(), 3);
        assert!(t.encounters.is_empty());
    }

    #[test]
    fn unmatched_zip_gets_cohort_median() {
        let dir = tempfile::tempdir().unwrap();
        let enc = write(dir.path(), "e.csv", "patient_id,encounter_id,date,kind,code\n");
        let demo = write(
            dir.path(),
            "d.csv",
            "patient_id,diagnosis_date,death_date,age,sex,race,marital_status,insurance,zip\n\
             a,2010-01-01,,1,,,,,1\nb,2010-01-01,,1,,,,,2\nc,2010-01-01,,1,,,,,9\n",
        );
        let inc = write(dir.path(), "i.csv", "zip,median_income\n1,10\n2,30\n");
        let t = load_tables(&enc, &demo, &inc).unwrap();
        assert_eq!(t.report.income_imputed, 1);
        assert_eq!(t.covariates["c"].median_household_income, 20.0);
    }
}
