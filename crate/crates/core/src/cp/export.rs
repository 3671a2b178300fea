use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CPModel, NORMALIZATION};
use crate::tensor::{DIAGNOSIS, MEDICATION};
use crate::{Error, Result};

pub const DEFAULT_DISPLAY_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phenotype {
    /// Position in the importance ordering, starting at 1.
    pub index: usize,
    pub importance: f64,
    pub dead: bool,
    /// Members with membership > 0, descending by value.
    pub diagnoses: Vec<(String, f64)>,
    pub medications: Vec<(String, f64)>,
}

/// Mean number of members per live phenotype, at membership > 0 and > threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthReport {
    pub threshold: f64,
    pub live_phenotypes: usize,
    pub diagnoses_nonzero: f64,
    pub medications_nonzero: f64,
    pub diagnoses_above: f64,
    pub medications_above: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeExport {
    pub normalization: String,
    pub phenotypes: Vec<Phenotype>,
    pub lengths: LengthReport,
}

/// Phenotype definitions of a normalized, sorted model.
/// `labels` holds the diagnosis and medication names, in factor row order.
pub fn export_phenotypes(m: &CPModel, dx_labels: &[String], med_labels: &[String], threshold: f64) -> Result<PhenotypeExport> {
    let dims = m.dims();
    if dx_labels.len() != dims[DIAGNOSIS] || med_labels.len() != dims[MEDICATION] {
        return Err(Error::DimensionMismatch(format!(
            "{} diagnosis and {} medication labels for factor sizes {} and {}",
            dx_labels.len(),
            med_labels.len(),
            dims[DIAGNOSIS],
            dims[MEDICATION]
        )));
    }
    let dead = m.dead_components();
    let members = |mode: usize, labels: &[String], r: usize| -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = m.factors[mode]
            .column(r)
            .iter()
            .zip(labels)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, l)| (l.clone(), x))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    };
    let phenotypes: Vec<Phenotype> = (0..m.rank())
        .map(|r| Phenotype {
            index: r + 1,
            importance: m.lambda[r],
            dead: dead[r],
            diagnoses: if dead[r] { Vec::new() } else { members(DIAGNOSIS, dx_labels, r) },
            medications: if dead[r] { Vec::new() } else { members(MEDICATION, med_labels, r) },
        })
        .collect();
    let lengths = length_report(&phenotypes, threshold);
    Ok(PhenotypeExport {
        normalization: NORMALIZATION.to_string(),
        phenotypes,
        lengths,
    })
}

fn length_report(phenotypes: &[Phenotype], threshold: f64) -> LengthReport {
    let live: Vec<&Phenotype> = phenotypes.iter().filter(|p| !p.dead).collect();
    let mean = |f: &dyn Fn(&Phenotype) -> usize| {
        if live.is_empty() {
            0.0
        } else {
            live.iter().map(|p| f(p) as f64).sum::<f64>() / live.len() as f64
        }
    };
    let above = |v: &[(String, f64)]| v.iter().filter(|(_, x)| *x > threshold).count();
    LengthReport {
        threshold,
        live_phenotypes: live.len(),
        diagnoses_nonzero: mean(&|p| p.diagnoses.len()),
        medications_nonzero: mean(&|p| p.medications.len()),
        diagnoses_above: mean(&|p| above(&p.diagnoses)),
        medications_above: mean(&|p| above(&p.medications)),
    }
}

/// Tab-separated listing: one row per live phenotype, diagnoses then
/// medications, members above the threshold in descending order.
pub fn phenotype_report_text(export: &PhenotypeExport) -> String {
    let l = &export.lengths;
    let mut out = String::new();
    let _ = writeln!(out, "# normalization: {}", export.normalization);
    let _ = writeln!(out, "# live phenotypes: {}", l.live_phenotypes);
    let _ = writeln!(
        out,
        "# mean length, membership > 0: diagnoses {:.2}, medications {:.2}",
        l.diagnoses_nonzero, l.medications_nonzero
    );
    let _ = writeln!(
        out,
        "# mean length, membership > {}: diagnoses {:.2}, medications {:.2}",
        l.threshold, l.diagnoses_above, l.medications_above
    );
    out.push_str("phenotype\timportance\tdiagnoses\tmedications\n");
    let list = |v: &[(String, f64)]| {
        v.iter()
            .filter(|(_, x)| *x > l.threshold)
            .map(|(n, x)| format!("{n} ({x:.2})"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    for p in export.phenotypes.iter().filter(|p| !p.dead) {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{}\t{}",
            p.index,
            p.importance,
            list(&p.diagnoses),
            list(&p.medications)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn names(n: usize, prefix: &str) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn lengths_at_both_thresholds() {
        let m = CPModel::new(
            Array1::from(vec![2.0, 0.0]),
            [array![[1.0, 1.0]], array![[1.0, 1.0], [0.05, 0.0], [0.0, 0.0]], array![[1.0, 0.0]]],
        )
        .unwrap();
        let e = export_phenotypes(&m, &names(3, "d"), &names(1, "m"), 0.1).unwrap();
        assert_eq!(e.phenotypes[0].diagnoses, vec![("d0".to_string(), 1.0), ("d1".to_string(), 0.05)]);
        assert!(e.phenotypes[1].dead && e.phenotypes[1].diagnoses.is_empty());
        assert_eq!(e.lengths.live_phenotypes, 1);
        assert_eq!(e.lengths.diagnoses_nonzero, 2.0);
        assert_eq!(e.lengths.diagnoses_above, 1.0);
        let text = phenotype_report_text(&e);
        assert!(text.contains("1\t2.000000\td0 (1.00)\tm0 (1.00)\n"));
        assert!(!text.contains("d1"));
    }

    #[test]
    fn identical_components_list_identically() {
        let m = CPModel::new(
            Array1::from(vec![1.0, 1.0]),
            [array![[1.0, 1.0]], array![[0.3, 0.3], [1.0, 1.0]], array![[1.0, 1.0], [0.5, 0.5]]],
        )
        .unwrap();
        let e = export_phenotypes(&m, &names(2, "d"), &names(2, "m"), 0.1).unwrap();
        assert_eq!(e.phenotypes[0].diagnoses, e.phenotypes[1].diagnoses);
        assert_eq!(e.phenotypes[0].medications, e.phenotypes[1].medications);
        assert_eq!(e.phenotypes[0].diagnoses[0].0, "d1");
    }

    #[test]
    fn label_mismatch_is_rejected() {
        let m = CPModel::new(Array1::from(vec![1.0]), [array![[1.0]], array![[1.0]], array![[1.0]]]).unwrap();
        assert!(export_phenotypes(&m, &names(2, "d"), &names(1, "m"), 0.1).is_err());
    }
}
