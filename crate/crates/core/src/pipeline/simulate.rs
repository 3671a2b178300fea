//! Synthetic cohorts with planted phenotypes, for end-to-end checks without
//! access to clinical records.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use ndarray::{Array1, Array2};
use rand::RngCore;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::cohort::{CovariateVector, OutcomeRule, PatientDemographics, DAYS_PER_YEAR};
use crate::logit::sigmoid;
use crate::rng::{index_below, substream, unit_f64, Domain};
use crate::{CPModel, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountModel {
    /// Each count is a Poisson draw with mean equal to the planted reconstruction.
    Poisson,
    /// Each count is the reconstruction rounded to the nearest integer.
    Rounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub n_dx: usize,
    pub n_med: usize,
    pub true_rank: usize,
    /// Probability that a structural zero of the planted tensor becomes a count of 1.
    pub noise: f64,
    pub count_model: CountModel,
    /// Weight of every planted component.
    pub count_scale: f64,
    /// Probability that a patient belongs to a given phenotype.
    pub membership_prob: f64,
    pub dx_per_phenotype: usize,
    pub med_per_phenotype: usize,
    /// Fraction of within-phenotype (diagnosis, medication) pairs listed as indicated.
    pub indicated_fraction: f64,
    pub label_intercept: f64,
    /// Log-odds per unit of planted membership, one per phenotype.
    pub label_coefficients: Vec<f64>,
    /// Log-odds per standard deviation of each covariate, in
    /// [`CovariateVector::NAMES`] order.
    pub covariate_effects: [f64; 6],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_patients: 2000,
            n_dx: 40,
            n_med: 30,
            true_rank: 4,
            noise: 0.002,
            count_model: CountModel::Poisson,
            count_scale: 1.0,
            membership_prob: 0.4,
            dx_per_phenotype: 6,
            med_per_phenotype: 5,
            indicated_fraction: 0.5,
            label_intercept: -1.0,
            label_coefficients: vec![2.0, -1.5, 0.0, 0.0],
            covariate_effects: [0.3, 0.3, -0.3, 0.3, 0.4, -0.3],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_patients == 0 || self.n_dx == 0 || self.n_med == 0 {
            return bad("simulated dimensions must be positive".into());
        }
        if self.true_rank == 0 {
            return bad("true_rank must be at least 1".into());
        }
        if self.dx_per_phenotype == 0 || self.dx_per_phenotype > self.n_dx {
            return bad(format!("dx_per_phenotype must lie in 1..={}", self.n_dx));
        }
        if self.med_per_phenotype == 0 || self.med_per_phenotype > self.n_med {
            return bad(format!("med_per_phenotype must lie in 1..={}", self.n_med));
        }
        for (name, p) in [
            ("noise", self.noise),
            ("membership_prob", self.membership_prob),
            ("indicated_fraction", self.indicated_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.count_scale > 0.0 && self.count_scale.is_finite()) {
            return bad(format!("count_scale must be positive, got {}", self.count_scale));
        }
        if self.label_coefficients.len() != self.true_rank {
            return bad(format!(
                "{} label coefficients for true_rank {}",
                self.label_coefficients.len(),
                self.true_rank
            ));
        }
        if !self.label_intercept.is_finite()
            || self.label_coefficients.iter().chain(&self.covariate_effects).any(|b| !b.is_finite())
        {
            return bad("label model coefficients must be finite".into());
        }
        Ok(())
    }
}

/// The planted model behind a simulated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub spec: SyntheticSpec,
    pub patient_ids: Vec<String>,
    pub dx_codes: Vec<String>,
    pub med_names: Vec<String>,
    pub lambda: Vec<f64>,
    /// Row-major factor matrices with max-normalized columns.
    pub patient_factor: Vec<Vec<f64>>,
    pub dx_factor: Vec<Vec<f64>>,
    pub med_factor: Vec<Vec<f64>>,
    pub indicated_pairs: Vec<(String, String)>,
    pub labels: Vec<u8>,
    /// Total planted counts, before noise.
    pub signal_total: u64,
    pub noise_total: u64,
}

impl SyntheticTruth {
    pub fn model(&self) -> Result<CPModel> {
        let mat = |rows: &Vec<Vec<f64>>| {
            let r = self.lambda.len();
            Array2::from_shape_fn((rows.len(), r), |(i, j)| rows[i][j])
        };
        CPModel::new(
            Array1::from(self.lambda.clone()),
            [mat(&self.patient_factor), mat(&self.dx_factor), mat(&self.med_factor)],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFiles {
    pub encounters: PathBuf,
    pub demographics: PathBuf,
    pub income: PathBuf,
    pub indications: PathBuf,
    pub truth: PathBuf,
    pub config: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub truth: SyntheticTruth,
    pub files: SimulatedFiles,
}

// Substream indices within the simulation domain.
const FACTORS: u64 = 0;
const MEMBERSHIP: u64 = 1;
const COUNTS: u64 = 2;
const DEMOGRAPHICS: u64 = 3;
const LABELS: u64 = 4;
const DATES: u64 = 5;

fn quarter(rng: &mut impl RngCore) -> f64 {
    (1 + index_below(rng, 4)) as f64 / 4.0
}

/// Consecutive (wrapping) block of `size` items for component `r`, spread evenly.
fn block(r: usize, rank: usize, n: usize, size: usize) -> Vec<usize> {
    let start = r * n / rank;
    (0..size).map(|i| (start + i) % n).collect()
}

fn item_factor(rng: &mut impl RngCore, rank: usize, n: usize, size: usize) -> Array2<f64> {
    let mut f = Array2::zeros((n, rank));
    for r in 0..rank {
        for (pos, i) in block(r, rank, n, size).into_iter().enumerate() {
            let v = quarter(rng);
            f[[i, r]] = if pos == 0 { 1.0 } else { v };
        }
    }
    f
}

fn patient_factor(rng: &mut impl RngCore, spec: &SyntheticSpec) -> Array2<f64> {
    let (n, rank) = (spec.n_patients, spec.true_rank);
    let mut u = Array2::zeros((n, rank));
    for p in 0..n {
        for r in 0..rank {
            if unit_f64(rng) < spec.membership_prob {
                u[[p, r]] = quarter(rng);
            }
        }
        if u.row(p).iter().all(|&x| x == 0.0) {
            let r = index_below(rng, rank);
            u[[p, r]] = quarter(rng);
        }
    }
    for r in 0..rank {
        let mut col = u.column_mut(r);
        let (arg, max) = col
            .iter()
            .enumerate()
            .fold((0, 0.0), |(a, m), (i, &x)| if x > m { (i, x) } else { (a, m) });
        if max < 1.0 {
            col[if max > 0.0 { arg } else { r % n }] = 1.0;
        }
    }
    u
}

const SEXES: [(&str, f64); 3] = [("M", 0.48), ("F", 0.49), ("", 0.03)];
const RACES: [(&str, f64); 4] = [("White", 0.68), ("Black", 0.2), ("Asian", 0.07), ("", 0.05)];
const MARITAL: [(&str, f64); 4] = [("Married", 0.55), ("Single", 0.25), ("Widowed", 0.15), ("", 0.05)];
const INSURANCE: [(&str, f64); 4] = [("Private", 0.45), ("Medicare", 0.38), ("Medicaid", 0.12), ("", 0.05)];
const N_ZIPS: usize = 40;

fn categorical(rng: &mut impl RngCore, levels: &[(&'static str, f64)]) -> Option<String> {
    let u = unit_f64(rng);
    let mut acc = 0.0;
    for &(name, p) in levels {
        acc += p;
        if u < acc {
            return (!name.is_empty()).then(|| name.to_string());
        }
    }
    let last = levels[levels.len() - 1].0;
    (!last.is_empty()).then(|| last.to_string())
}

fn standardize_columns(x: &mut Array2<f64>) {
    for mut col in x.columns_mut() {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        col.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 });
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Generates a cohort and writes it to `dir` in the ingestion formats, with
/// the planted model in `truth.json` and a starter `experiment.cfg`.
pub fn simulate_cohort(spec: &SyntheticSpec, dir: &Path) -> Result<Simulation> {
    spec.validate()?;
    let (n, rank) = (spec.n_patients, spec.true_rank);
    let stream = |k| substream(spec.seed, Domain::Simulation, k);

    let mut rng = stream(FACTORS);
    let dx_f = item_factor(&mut rng, rank, spec.n_dx, spec.dx_per_phenotype);
    let med_f = item_factor(&mut rng, rank, spec.n_med, spec.med_per_phenotype);
    let u = patient_factor(&mut stream(MEMBERSHIP), spec);
    let lambda = vec![spec.count_scale; rank];

    let patient_ids: Vec<String> = (0..n).map(|p| format!("P{p:05}")).collect();
    let dx_codes: Vec<String> = (0..spec.n_dx).map(|d| format!("D{d:03}")).collect();
    let med_names: Vec<String> = (0..spec.n_med).map(|m| format!("med{m:03}")).collect();

    let mut indicated = BTreeSet::new();
    for r in 0..rank {
        let dxs = block(r, rank, spec.n_dx, spec.dx_per_phenotype);
        for m in block(r, rank, spec.n_med, spec.med_per_phenotype) {
            indicated.insert((dxs[0], m));
            for &d in &dxs[1..] {
                if unit_f64(&mut rng) < spec.indicated_fraction {
                    indicated.insert((d, m));
                }
            }
        }
    }

    // Counts per (patient, diagnosis, medication), in index order.
    let mut rng = stream(COUNTS);
    let mut counts: Vec<(usize, usize, usize, u64)> = Vec::new();
    let (mut signal_total, mut noise_total) = (0u64, 0u64);
    for p in 0..n {
        for d in 0..spec.n_dx {
            for m in 0..spec.n_med {
                let mu: f64 = (0..rank).map(|r| lambda[r] * u[[p, r]] * dx_f[[d, r]] * med_f[[m, r]]).sum();
                let c = if mu > 0.0 {
                    let c = match spec.count_model {
                        CountModel::Poisson => Poisson::new(mu)
                            .map_err(|e| Error::Config(format!("poisson mean {mu}: {e}")))?
                            .sample(&mut rng) as u64,
                        CountModel::Rounded => mu.round() as u64,
                    };
                    signal_total += c;
                    c
                } else if unit_f64(&mut rng) < spec.noise {
                    noise_total += 1;
                    1
                } else {
                    0
                };
                if c > 0 {
                    counts.push((p, d, m, c));
                }
            }
        }
    }

    // Demographics and covariates.
    let mut rng = stream(DEMOGRAPHICS);
    let income_dist = LogNormal::new(60_000f64.ln(), 0.4).expect("valid lognormal");
    let zip_income: Vec<f64> = (0..N_ZIPS).map(|_| income_dist.sample(&mut rng).round()).collect();
    let age_dist = Normal::new(62.0f64, 10.0).expect("valid normal");
    let mut demographics: Vec<PatientDemographics> = Vec::with_capacity(n);
    let mut cov = Array2::zeros((n, CovariateVector::NAMES.len()));
    for (p, id) in patient_ids.iter().enumerate() {
        let zip = index_below(&mut rng, N_ZIPS);
        let age: f64 = age_dist.sample(&mut rng);
        let age = age.clamp(18.0, 95.0);
        let d = PatientDemographics {
            patient_id: id.clone(),
            diagnosis_date: None,
            death_date: None,
            age_at_diagnosis: (age * 10.0).round() / 10.0,
            sex: categorical(&mut rng, &SEXES),
            race: categorical(&mut rng, &RACES),
            marital_status: categorical(&mut rng, &MARITAL),
            insurance: categorical(&mut rng, &INSURANCE),
            zip_code: format!("60{zip:03}"),
        };
        let c = CovariateVector::from_demographics(&d, zip_income[zip]);
        for (j, v) in c.to_array().into_iter().enumerate() {
            cov[[p, j]] = v;
        }
        demographics.push(d);
    }
    standardize_columns(&mut cov);

    let mut rng = stream(LABELS);
    let labels: Vec<u8> = (0..n)
        .map(|p| {
            let eta = spec.label_intercept
                + (0..rank).map(|r| spec.label_coefficients[r] * u[[p, r]]).sum::<f64>()
                + (0..6).map(|j| spec.covariate_effects[j] * cov[[p, j]]).sum::<f64>();
            u8::from(unit_f64(&mut rng) < sigmoid(eta))
        })
        .collect();
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == n {
        return Err(Error::Config(format!(
            "simulated labels have a single class ({positives} of {n} positive); adjust the label model"
        )));
    }

    // Dates: label 1 means death within the default outcome horizon.
    let horizon = i64::from(OutcomeRule::default().horizon_years * DAYS_PER_YEAR);
    let window = i64::from(OutcomeRule::default().window_years * DAYS_PER_YEAR);
    let epoch = NaiveDate::from_ymd_opt(2005, 1, 1).expect("valid date");
    let mut rng = stream(DATES);
    for (d, &y) in demographics.iter_mut().zip(&labels) {
        let dx = epoch + Duration::days(index_below(&mut rng, 3650) as i64);
        d.diagnosis_date = Some(dx);
        d.death_date = if y == 1 {
            Some(dx + Duration::days(30 + index_below(&mut rng, (horizon - 30) as usize) as i64))
        } else if unit_f64(&mut rng) < 0.5 {
            Some(dx + Duration::days(horizon + 1 + index_below(&mut rng, horizon as usize) as i64))
        } else {
            None
        };
    }

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SimulatedFiles {
        encounters: dir.join("encounters.csv"),
        demographics: dir.join("demographics.csv"),
        income: dir.join("income.csv"),
        indications: dir.join("indications.csv"),
        truth: dir.join("truth.json"),
        config: dir.join("experiment.cfg"),
    };

    let mut w = csv_writer(&files.encounters)?;
    w.write_record(["patient_id", "encounter_id", "date", "kind", "code"])?;
    let mut next_encounter = vec![0usize; n];
    for &(p, d, m, c) in &counts {
        let dx_date = demographics[p].diagnosis_date.expect("set above");
        for _ in 0..c {
            let eid = format!("E{p:05}-{:05}", next_encounter[p]);
            next_encounter[p] += 1;
            let date = (dx_date + Duration::days(index_below(&mut rng, window as usize + 1) as i64)).to_string();
            w.write_record([patient_ids[p].as_str(), &eid, &date, "DX", &dx_codes[d]])?;
            w.write_record([patient_ids[p].as_str(), &eid, &date, "MED", &med_names[m]])?;
        }
    }
    w.flush().map_err(|e| Error::io(&files.encounters, e))?;

    let mut w = csv_writer(&files.demographics)?;
    w.write_record([
        "patient_id",
        "diagnosis_date",
        "death_date",
        "age",
        "sex",
        "race",
        "marital_status",
        "insurance",
        "zip",
    ])?;
    let opt = |s: &Option<String>| s.clone().unwrap_or_default();
    for d in &demographics {
        w.write_record([
            d.patient_id.clone(),
            d.diagnosis_date.map(|x| x.to_string()).unwrap_or_default(),
            d.death_date.map(|x| x.to_string()).unwrap_or_default(),
            format!("{:.1}", d.age_at_diagnosis),
            opt(&d.sex),
            opt(&d.race),
            opt(&d.marital_status),
            opt(&d.insurance),
            d.zip_code.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&files.demographics, e))?;

    let mut w = csv_writer(&files.income)?;
    w.write_record(["zip", "median_income"])?;
    for (z, inc) in zip_income.iter().enumerate() {
        w.write_record([format!("60{z:03}"), format!("{inc:.0}")])?;
    }
    w.flush().map_err(|e| Error::io(&files.income, e))?;

    let mut w = csv_writer(&files.indications)?;
    w.write_record(["diagnosis_code", "medication"])?;
    for &(d, m) in &indicated {
        w.write_record([&dx_codes[d], &med_names[m]])?;
    }
    w.flush().map_err(|e| Error::io(&files.indications, e))?;

    let rows = |a: &Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let truth = SyntheticTruth {
        spec: spec.clone(),
        patient_ids,
        dx_codes: dx_codes.clone(),
        med_names: med_names.clone(),
        lambda,
        patient_factor: rows(&u),
        dx_factor: rows(&dx_f),
        med_factor: rows(&med_f),
        indicated_pairs: indicated.iter().map(|&(d, m)| (dx_codes[d].clone(), med_names[m].clone())).collect(),
        labels,
        signal_total,
        noise_total,
    };
    let json = serde_json::to_string_pretty(&truth)?;
    std::fs::write(&files.truth, json).map_err(|e| Error::io(&files.truth, e))?;

    let mut cfg = String::new();
    let _ = writeln!(cfg, "# Simulated cohort, seed {}", spec.seed);
    for (k, v) in [
        ("encounters", "encounters.csv"),
        ("demographics", "demographics.csv"),
        ("income", "income.csv"),
        ("indications", "indications.csv"),
        ("correspondence", "equal"),
        ("output_dir", "results"),
    ] {
        let _ = writeln!(cfg, "{k} = {v}");
    }
    let _ = writeln!(cfg, "rank = {rank}");
    std::fs::write(&files.config, cfg).map_err(|e| Error::io(&files.config, e))?;

    Ok(Simulation { truth, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_patients: 60,
            n_dx: 8,
            n_med: 6,
            true_rank: 2,
            dx_per_phenotype: 3,
            med_per_phenotype: 3,
            label_coefficients: vec![1.0, -1.0],
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = simulate_cohort(&small(3), a.path()).unwrap();
        let sb = simulate_cohort(&small(3), b.path()).unwrap();
        for (x, y) in [
            (&sa.files.encounters, &sb.files.encounters),
            (&sa.files.demographics, &sb.files.demographics),
            (&sa.files.income, &sb.files.income),
            (&sa.files.indications, &sb.files.indications),
            (&sa.files.truth, &sb.files.truth),
        ] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
        }
        let c = tempfile::tempdir().unwrap();
        let sc = simulate_cohort(&small(4), c.path()).unwrap();
        assert_ne!(sa.truth.labels, sc.truth.labels);
    }

    #[test]
    fn truth_columns_are_max_normalized() {
        let d = tempfile::tempdir().unwrap();
        let s = simulate_cohort(&small(1), d.path()).unwrap();
        let m = s.truth.model().unwrap();
        for f in &m.factors {
            for col in f.columns() {
                assert_eq!(col.iter().cloned().fold(0.0, f64::max), 1.0);
                assert!(col.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let d = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            label_intercept: -60.0,
            ..small(0)
        };
        assert!(matches!(simulate_cohort(&spec, d.path()), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_specs() {
        let d = tempfile::tempdir().unwrap();
        for spec in [
            SyntheticSpec { true_rank: 0, label_coefficients: vec![], ..small(0) },
            SyntheticSpec { n_dx: 0, ..small(0) },
            SyntheticSpec { noise: 1.5, ..small(0) },
            SyntheticSpec { label_coefficients: vec![1.0], ..small(0) },
        ] {
            assert!(simulate_cohort(&spec, d.path()).is_err());
        }
    }
}
