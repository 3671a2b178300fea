use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Correspondence, Entry, IndicationMap, SparseTensor3, PATIENT};
use crate::cohort::CohortTable;
use crate::{Error, Result};

/// Counts, per patient, the encounters in which each (diagnosis, medication)
/// pair occurs together. The patient axis lists every cohort patient in
/// lexicographic order; the diagnosis and medication axes list the codes that
/// occur in at least one counted pair, also sorted.
pub fn count_cooccurrences(
    table: &CohortTable,
    mode: Correspondence,
    indications: Option<&IndicationMap>,
) -> Result<SparseTensor3> {
    let allowed: Option<HashMap<&str, HashSet<&str>>> = match mode {
        Correspondence::Equal => None,
        Correspondence::Indicated => {
            let map = indications.ok_or(Error::MissingIndications)?;
            let mut lookup: HashMap<&str, HashSet<&str>> = HashMap::new();
            for (d, m) in &map.pairs {
                lookup.entry(d.as_str()).or_default().insert(m.as_str());
            }
            Some(lookup)
        }
    };

    let patients = table.patient_ids();
    let patient_index: HashMap<&str, usize> = patients.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();

    let mut counts: BTreeMap<(usize, &str, &str), u32> = BTreeMap::new();
    for enc in &table.encounters {
        let &p = patient_index
            .get(enc.patient_id.as_str())
            .ok_or_else(|| Error::DimensionMismatch(format!("encounter patient `{}` not in cohort", enc.patient_id)))?;
        let dxs: BTreeSet<&str> = enc.diagnoses.iter().map(String::as_str).collect();
        let meds: BTreeSet<&str> = enc.medications.iter().map(String::as_str).collect();
        for &d in &dxs {
            let permitted = allowed.as_ref().map(|a| a.get(d));
            if let Some(None) = permitted {
                continue;
            }
            for &m in &meds {
                if let Some(Some(set)) = permitted {
                    if !set.contains(m) {
                        continue;
                    }
                }
                *counts.entry((p, d, m)).or_default() += 1;
            }
        }
    }

    let dx_labels: Vec<String> = counts
        .keys()
        .map(|k| k.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(String::from)
        .collect();
    let med_labels: Vec<String> = counts
        .keys()
        .map(|k| k.2)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(String::from)
        .collect();
    let dx_index: HashMap<&str, usize> = dx_labels.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let med_index: HashMap<&str, usize> = med_labels.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let entries = counts
        .iter()
        .map(|(&(p, d, m), &count)| Entry {
            index: [p, dx_index[d], med_index[m]],
            count,
        })
        .collect();
    SparseTensor3::new([patients, dx_labels, med_labels], entries)
}

/// Nearest-rank percentile of the nonzero counts.
pub(crate) fn nearest_rank(sorted: &[u32], q: f64) -> u32 {
    sorted[crate::nearest_rank_index(sorted.len(), q)]
}

/// Caps every count at the nearest-rank `percentile` of the nonzero counts.
pub fn truncate_counts(t: &SparseTensor3, percentile: f64) -> Result<SparseTensor3> {
    if t.is_empty() {
        return Err(Error::EmptyTensor);
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::Config(format!("percentile {percentile} outside (0, 1]")));
    }
    let mut sorted: Vec<u32> = t.entries.iter().map(|e| e.count).collect();
    sorted.sort_unstable();
    let cap = nearest_rank(&sorted, percentile);
    let mut out = t.clone();
    for e in &mut out.entries {
        e.count = e.count.min(cap);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub removed: Vec<String>,
    /// Every patient was empty; the result has no patients.
    pub all_empty: bool,
}

/// Removes patients without any nonzero entry from both the tensor and the
/// cohort, compacting patient indices.
pub fn drop_empty_patients(t: &SparseTensor3, table: &CohortTable) -> (SparseTensor3, CohortTable, DropReport) {
    let mut present = vec![false; t.dims[PATIENT]];
    for e in &t.entries {
        present[e.index[PATIENT]] = true;
    }
    let mut remap = vec![usize::MAX; t.dims[PATIENT]];
    let mut kept_labels = Vec::new();
    let mut removed = Vec::new();
    for (i, label) in t.labels[PATIENT].iter().enumerate() {
        if present[i] {
            remap[i] = kept_labels.len();
            kept_labels.push(label.clone());
        } else {
            removed.push(label.clone());
        }
    }
    let entries = t
        .entries
        .iter()
        .map(|e| Entry {
            index: [remap[e.index[PATIENT]], e.index[1], e.index[2]],
            count: e.count,
        })
        .collect();
    let all_empty = kept_labels.is_empty() && !removed.is_empty();
    let labels = [kept_labels, t.labels[1].clone(), t.labels[2].clone()];
    let tensor = SparseTensor3::new(labels, entries).expect("compaction preserves validity");

    let keep: BTreeSet<String> = table
        .demographics
        .keys()
        .filter(|id| !removed.contains(id))
        .cloned()
        .collect();
    let mut table = table.clone();
    table.retain_patients(&keep);
    (tensor, table, DropReport { removed, all_empty })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorStats {
    pub n_patients: usize,
    pub n_diagnoses: usize,
    pub n_medications: usize,
    pub n_dx_med_pairs: usize,
    pub median_cooccurrences_per_patient: f64,
    pub total_cooccurrences: u64,
    pub deaths_at_horizon: usize,
    pub mean_age: f64,
}

pub fn tensor_stats(t: &SparseTensor3, table: &CohortTable) -> TensorStats {
    if t.dims[PATIENT] == 0 {
        return TensorStats::default();
    }
    let mut per_patient = vec![0u64; t.dims[PATIENT]];
    let mut dx = BTreeSet::new();
    let mut med = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    for e in &t.entries {
        per_patient[e.index[0]] += u64::from(e.count);
        dx.insert(e.index[1]);
        med.insert(e.index[2]);
        pairs.insert((e.index[1], e.index[2]));
    }
    let mut sums: Vec<f64> = per_patient.iter().map(|&s| s as f64).collect();
    sums.sort_by(f64::total_cmp);
    let median = crate::median_sorted(&sums);

    let ids = &t.labels[PATIENT];
    let deaths = table
        .labels
        .as_ref()
        .map(|l| ids.iter().filter(|id| l.get(*id) == Some(&1)).count())
        .unwrap_or(0);
    let ages: Vec<f64> = ids
        .iter()
        .filter_map(|id| table.demographics.get(id).map(|d| d.age_at_diagnosis))
        .collect();
    let mean_age = if ages.is_empty() {
        0.0
    } else {
        ages.iter().sum::<f64>() / ages.len() as f64
    };
    TensorStats {
        n_patients: t.dims[PATIENT],
        n_diagnoses: dx.len(),
        n_medications: med.len(),
        n_dx_med_pairs: pairs.len(),
        median_cooccurrences_per_patient: median,
        total_cooccurrences: t.total(),
        deaths_at_horizon: deaths,
        mean_age,
    }
}
