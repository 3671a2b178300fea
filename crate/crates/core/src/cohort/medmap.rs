use std::path::Path;

use super::CohortTable;
use crate::{Error, Result};

/// One `pattern<TAB>generic[,generic...]` line of a mapping file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingRule {
    pub pattern: String,
    pub generics: Vec<String>,
}

/// Ordered medication name rules; the first matching rule wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MedicationMap {
    pub rules: Vec<MappingRule>,
}

impl MedicationMap {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let malformed = |message: &str| Error::MalformedRule {
                path: source.to_path_buf(),
                line: i + 1,
                message: message.to_string(),
            };
            let (pattern, generics) = line.split_once('\t').ok_or_else(|| malformed("missing TAB separator"))?;
            let pattern = pattern.trim();
            if pattern.is_empty() {
                return Err(malformed("empty pattern"));
            }
            let generics: Vec<String> = generics.split(',').map(|g| g.trim().to_string()).collect();
            if generics.iter().any(String::is_empty) {
                return Err(malformed("empty generic name"));
            }
            rules.push(MappingRule {
                pattern: pattern.to_string(),
                generics,
            });
        }
        Ok(MedicationMap { rules })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Generic names for `name`, or `name` itself when no rule matches.
    pub fn apply(&self, name: &str) -> Vec<String> {
        self.rules
            .iter()
            .find(|r| glob_match(&r.pattern, name))
            .map(|r| r.generics.clone())
            .unwrap_or_else(|| vec![name.to_string()])
    }
}

/// Case-insensitive whole-string match where `*` matches any substring.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.to_lowercase().chars().collect();
    let t: Vec<char> = text.to_lowercase().chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

pub fn normalize_with(mut table: CohortTable, map: &MedicationMap) -> CohortTable {
    for enc in &mut table.encounters {
        let mut out: Vec<String> = Vec::with_capacity(enc.medications.len());
        for med in &enc.medications {
            for g in map.apply(med) {
                if !out.contains(&g) {
                    out.push(g);
                }
            }
        }
        enc.medications = out;
    }
    table
}

pub fn normalize_medication_names(table: CohortTable, mapping_path: &Path) -> Result<CohortTable> {
    let map = MedicationMap::from_path(mapping_path)?;
    Ok(normalize_with(table, &map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{CohortReport, EncounterRecord};
    use std::collections::BTreeMap;

    fn map(text: &str) -> MedicationMap {
        MedicationMap::parse(text, Path::new("map.tsv")).unwrap()
    }

    fn table(meds: &[&str]) -> CohortTable {
        CohortTable {
            encounters: vec![EncounterRecord {
                patient_id: "p".into(),
                encounter_id: "e".into(),
                date: chrono::NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(),
                diagnoses: vec![],
                medications: meds.iter().map(|s| s.to_string()).collect(),
            }],
            demographics: BTreeMap::new(),
            covariates: BTreeMap::new(),
            labels: None,
            report: CohortReport::default(),
        }
    }

    #[test]
    fn single_rule_match() {
        let m = map("LIPITOR*\tatorvastatin\n");
        assert_eq!(m.apply("LIPITOR 20MG TAB"), vec!["atorvastatin"]);
        assert_eq!(m.apply("lipitor"), vec!["atorvastatin"]);
    }

    #[test]
    fn combination_rule_splits_components() {
        let m = map("hydrocodone-acetaminophen*\thydrocodone,acetaminophen\n");
        let t = normalize_with(table(&["hydrocodone-acetaminophen"]), &m);
        assert_eq!(t.encounters[0].medications, vec!["hydrocodone", "acetaminophen"]);
    }

    #[test]
    fn unmatched_name_passes_through() {
        let m = map("LIPITOR*\tatorvastatin\n");
        assert_eq!(m.apply("widgetol"), vec!["widgetol"]);
    }

    #[test]
    fn first_match_wins_and_duplicates_collapse() {
        let m = map("# comment\n*statin*\tstatin\nATORVA*\tatorvastatin\n\nLIPITOR*\tatorvastatin\n");
        assert_eq!(m.apply("atorvastatin"), vec!["statin"]);
        let t = normalize_with(table(&["LIPITOR 10", "lipitor 20"]), &m);
        assert_eq!(t.encounters[0].medications, vec!["atorvastatin"]);
    }

    #[test]
    fn malformed_rules_report_line() {
        let err = MedicationMap::parse("A*\ta\nno tab here\n", Path::new("m")).unwrap_err();
        assert!(matches!(err, Error::MalformedRule { line: 2, .. }));
        let err = MedicationMap::parse("A*\ta,\n", Path::new("m")).unwrap_err();
        assert!(matches!(err, Error::MalformedRule { line: 1, .. }));
    }

    #[test]
    fn rerun_is_noop_when_generics_match_no_pattern() {
        let m = map("LIPITOR*\tatorvastatin\nZOCOR*\tsimvastatin\n");
        let once = normalize_with(table(&["LIPITOR 10", "ZOCOR", "aspirin"]), &m);
        let twice = normalize_with(once.clone(), &m);
        assert_eq!(once, twice);
    }

    #[test]
    fn glob_edge_cases() {
        assert!(glob_match("*", ""));
        assert!(glob_match("a*b*c", "aXXbYYc"));
        assert!(!glob_match("a*b", "aXXbc"));
        assert!(glob_match("*B", "aab"));
        assert!(!glob_match("abc", "abcd"));
    }
}
