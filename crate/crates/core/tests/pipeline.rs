use std::path::Path;

use phenotensor::cp::frobenius_fit;
use phenotensor::pipeline::{
    grid_cells, prepare, report_table1, run_prepared, simulate_cohort, stats_both_modes, tune_omega, CountModel,
    ExperimentConfig, FeatureSet, PreparedData, Simulation, SyntheticSpec, Table1Column,
};
use phenotensor::solver::factorize;
use phenotensor::tensor::PATIENT;
use phenotensor::SolverConfig;

fn simulate(spec: SyntheticSpec, dir: &Path) -> (Simulation, ExperimentConfig) {
    let sim = simulate_cohort(&spec, dir).unwrap();
    let mut cfg = ExperimentConfig::from_path(&sim.files.config).unwrap();
    cfg.output_dir = dir.join("out");
    cfg.cv.folds = 3;
    cfg.cv.repeats = 1;
    cfg.cv.n_boot = 50;
    cfg.solver.max_outer_iters = 40;
    (sim, cfg)
}

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_patients: 400,
        n_dx: 12,
        n_med: 10,
        true_rank: 2,
        label_coefficients: vec![2.0, -1.5],
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn noiseless_rounded_cohort_is_exactly_the_planted_rank_one_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        n_patients: 300,
        n_dx: 8,
        n_med: 6,
        true_rank: 1,
        noise: 0.0,
        count_model: CountModel::Rounded,
        count_scale: 64.0,
        membership_prob: 0.7,
        dx_per_phenotype: 8,
        med_per_phenotype: 6,
        label_coefficients: vec![1.0],
        seed: 2,
        ..SyntheticSpec::default()
    };
    let (sim, mut cfg) = simulate(spec, dir.path());
    cfg.truncation_percentile = 1.0;
    cfg.prevalence.dx_min_frac = 0.0;
    cfg.prevalence.med_min_frac = 0.0;
    let data = prepare(&cfg).unwrap();

    let truth = sim.truth.model().unwrap();
    let t = &data.tensor;
    let row = |labels: &[String], name: &String| labels.iter().position(|l| l == name).unwrap();
    for e in &t.entries {
        let [p, d, m] = e.index;
        let expected = truth
            .reconstruct_entry(
                row(&sim.truth.patient_ids, &t.labels[0][p]),
                row(&sim.truth.dx_codes, &t.labels[1][d]),
                row(&sim.truth.med_names, &t.labels[2][m]),
            )
            .unwrap();
        assert_eq!(f64::from(e.count), expected, "entry {:?}", e.index);
    }
    assert_eq!(t.total(), sim.truth.signal_total);

    let cfg = SolverConfig {
        rank: 1,
        rel_tol: 1e-14,
        max_outer_iters: 2000,
        ..SolverConfig::default()
    };
    let fit = factorize(t, &cfg, None).unwrap();
    // The expanded residual can cancel to a hair below zero at an exact fit.
    let rel = (frobenius_fit(&fit.model, t).unwrap().max(0.0) / t.norm_sq()).sqrt();
    assert!(rel < 1e-6, "relative residual {rel}");
}

#[test]
fn experiment_is_reproducible_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = simulate(small_spec(9), dir.path());
    cfg.omega_grid = vec![0.0, 1.0];
    let data = prepare(&cfg).unwrap();
    let a = run_prepared(&cfg, &data).unwrap();
    let b = run_prepared(&cfg, &data).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.reports.len(), grid_cells(&cfg).len());

    let out = &cfg.output_dir;
    assert!(out.join("summary.tsv").exists() && out.join("tensor_stats.json").exists());
    assert!(out.join("all_cov/report.json").exists());
    assert!(!out.join("all_cov/model.json").exists());
    for cell in ["phen_unsup", "phen_sup", "phen_cov_unsup", "phen_cov_sup"] {
        let d = out.join(format!("all_{cell}"));
        for f in ["report.json", "folds.tsv", "model.json", "trace.tsv", "phenotypes.tsv"] {
            assert!(d.join(f).exists(), "{cell}/{f}");
        }
    }
    for r in &a.reports {
        assert!((0.0..=1.0).contains(&r.cv.mean_auc));
        assert!(r.cv.ci_lower <= r.cv.mean_auc + 1e-12 && r.cv.mean_auc <= r.cv.ci_upper + 1e-12);
    }
}

#[test]
fn unsupervised_only_grid_without_covariates_has_one_cell() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = simulate(small_spec(10), dir.path());
    cfg.omega_grid = vec![0.0];
    cfg.use_covariates = false;
    let data = prepare(&cfg).unwrap();
    let out = run_prepared(&cfg, &data).unwrap();
    let cells: Vec<&str> = out.reports.iter().map(|r| r.cell.as_str()).collect();
    assert_eq!(cells, ["phen_unsup"]);
    assert_eq!(out.reports[0].omega, Some(0.0));
}

#[test]
fn single_positive_omega_needs_no_tuning() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = simulate(small_spec(11), dir.path());
    cfg.omega_grid = vec![0.0, 0.5];
    let data: PreparedData = prepare(&cfg).unwrap();
    let base = factorize(&data.tensor, &cfg.solver, None).unwrap().model;
    let train: Vec<usize> = (0..data.labels.len()).step_by(2).collect();
    let sel = tune_omega(&data, FeatureSet::Phenotypes, &base, &cfg, &train, 1).unwrap();
    assert_eq!(sel.omega, 0.5);
    assert_eq!(sel.candidates, vec![(0.5, None)]);
    assert_eq!(base.factors[PATIENT].nrows(), data.labels.len());
}

#[test]
fn labels_unrelated_to_anything_give_chance_auc() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        n_patients: 1500,
        label_coefficients: vec![0.0, 0.0],
        covariate_effects: [0.0; 6],
        ..small_spec(12)
    };
    let (_, mut cfg) = simulate(spec, dir.path());
    cfg.omega_grid = vec![0.0];
    cfg.cv.folds = 5;
    let data = prepare(&cfg).unwrap();
    for r in run_prepared(&cfg, &data).unwrap().reports {
        assert!((r.cv.mean_auc - 0.5).abs() < 0.05, "{}: {}", r.cell, r.cv.mean_auc);
    }
}

#[test]
fn indicated_tensor_is_a_subset_of_the_equal_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = simulate(small_spec(13), dir.path());
    let (all, ind) = stats_both_modes(&cfg).unwrap();
    assert!(ind.n_patients <= all.n_patients);
    assert!(ind.n_dx_med_pairs <= all.n_dx_med_pairs);
    assert!(ind.total_cooccurrences <= all.total_cooccurrences);
    let table = report_table1(&[Table1Column {
        cohort: "synthetic".into(),
        all,
        ind,
    }]);
    assert!(table.warnings.is_empty());
    assert!(table.text.contains("synthetic"));
}
