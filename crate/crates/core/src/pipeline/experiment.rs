use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{prepare, ExperimentConfig, PreparedData};
use crate::cp::{export_phenotypes, phenotype_report_text, LengthReport, NORMALIZATION};
use crate::logit::{repeated_cv, CvConfig, CvReport, FoldDesign};
use crate::rng::{substream, Domain};
use crate::solver::{factorize, factorize_from, FactorizeOutput, SolverConfig, Supervision};
use crate::tensor::{TensorStats, DIAGNOSIS, MEDICATION, PATIENT};
use crate::{CPModel, CohortTable, Correspondence, CovariateVector, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Covariates,
    Phenotypes,
    PhenotypesCovariates,
}

impl FeatureSet {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Covariates => "cov",
            FeatureSet::Phenotypes => "phen",
            FeatureSet::PhenotypesCovariates => "phen_cov",
        }
    }

    pub fn uses_phenotypes(self) -> bool {
        self != FeatureSet::Covariates
    }

    pub fn uses_covariates(self) -> bool {
        self != FeatureSet::Phenotypes
    }
}

/// One cell of the evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub features: FeatureSet,
    /// Only meaningful for phenotype feature sets.
    pub supervised: bool,
}

impl Cell {
    pub fn name(&self) -> String {
        match self.features {
            FeatureSet::Covariates => "cov".into(),
            f => format!("{}_{}", f.name(), if self.supervised { "sup" } else { "unsup" }),
        }
    }
}

/// Cells implied by a configuration. Unsupervised phenotype cells always run
/// (their model also seeds the supervised fits); supervised cells need a
/// positive grid entry; covariate cells need `use_covariates`.
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let supervision: &[bool] = if cfg.positive_omegas().is_empty() { &[false] } else { &[false, true] };
    let mut cells = Vec::new();
    if cfg.use_covariates {
        cells.push(Cell {
            features: FeatureSet::Covariates,
            supervised: false,
        });
    }
    let mut feature_sets = vec![FeatureSet::Phenotypes];
    if cfg.use_covariates {
        feature_sets.push(FeatureSet::PhenotypesCovariates);
    }
    for features in feature_sets {
        for &supervised in supervision {
            cells.push(Cell { features, supervised });
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaSelection {
    pub omega: f64,
    /// Mean inner-CV AUC per positive candidate; `None` when there was a
    /// single candidate and nothing to compare.
    pub candidates: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub rep: usize,
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Absent for the covariates-only cell.
    pub omega: Option<f64>,
    /// Iterations of the per-fold factorization (supervised cells only).
    pub iterations: Option<usize>,
    pub selection: Option<OmegaSelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cell: String,
    pub correspondence: Correspondence,
    pub features: FeatureSet,
    pub supervised: bool,
    pub cv: CvReport,
    /// 0 for unsupervised cells, the most frequently selected value for
    /// supervised cells, absent without factorization.
    pub omega: Option<f64>,
    pub folds: Vec<FoldRecord>,
    pub lengths: Option<LengthReport>,
    pub factorized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub reports: Vec<EvalReport>,
    pub stats: TensorStats,
    /// Contents of `summary.tsv`.
    pub summary: String,
}

/// Picks the positive ω with the highest mean AUC; ties go to the smaller ω.
pub fn select_omega(means: &[(f64, f64)]) -> Result<f64> {
    let mut positive: Vec<(f64, f64)> = means.iter().copied().filter(|&(w, _)| w > 0.0).collect();
    positive.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    for (w, auc) in positive {
        if best.is_none_or(|(_, b)| auc > b) {
            best = Some((w, auc));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::Config("omega grid has no positive entry".into()))
}

fn design_matrix(covariates: &Array2<f64>, u: Option<&Array2<f64>>, features: FeatureSet, rows: &[usize]) -> Array2<f64> {
    let r = if features.uses_phenotypes() { u.map_or(0, |u| u.ncols()) } else { 0 };
    let c = if features.uses_covariates() { covariates.ncols() } else { 0 };
    Array2::from_shape_fn((rows.len(), r + c), |(i, j)| match u {
        Some(u) if j < r => u[[rows[i], j]],
        _ => covariates[[rows[i], j - r]],
    })
}

/// Candidate features for one split: phenotype memberships (columns of `u`)
/// and/or covariates, restricted to the rows of `train` and `test`.
fn design(covariates: &Array2<f64>, u: Option<&Array2<f64>>, features: FeatureSet, train: &[usize], test: &[usize]) -> FoldDesign {
    let mut names = Vec::new();
    if let (true, Some(u)) = (features.uses_phenotypes(), u) {
        names.extend((1..=u.ncols()).map(|k| format!("phenotype_{k}")));
    }
    if features.uses_covariates() {
        names.extend(CovariateVector::NAMES.iter().map(|s| s.to_string()));
    }
    FoldDesign {
        train: design_matrix(covariates, u, features, train),
        test: design_matrix(covariates, u, features, test),
        names,
    }
}

/// Transductive supervised factorization: every patient is factorized, only
/// `train` labels enter the supervised term.
fn supervised_fit(
    data: &PreparedData,
    features: FeatureSet,
    base: &CPModel,
    solver: &SolverConfig,
    train: &[usize],
    omega: f64,
) -> Result<FactorizeOutput> {
    let labels = train.iter().map(|&i| (i, data.labels[i])).collect();
    let covariates = features.uses_covariates().then(|| data.covariates.clone());
    let sup = Supervision::new(labels, covariates, solver.rank);
    let cfg = SolverConfig {
        omega,
        ..solver.clone()
    };
    factorize_from(&data.tensor, &cfg, Some(&sup), Some(base))
}

/// Chooses ω for one outer training set by inner cross-validation over the
/// positive grid entries. Test-fold labels are never seen: `train` holds the
/// outer training patients and only their labels are used.
pub fn tune_omega(
    data: &PreparedData,
    features: FeatureSet,
    base: &CPModel,
    cfg: &ExperimentConfig,
    train: &[usize],
    inner_seed: u64,
) -> Result<OmegaSelection> {
    let grid = cfg.positive_omegas();
    match grid.as_slice() {
        [] => return Err(Error::Config("omega grid has no positive entry".into())),
        [w] => {
            return Ok(OmegaSelection {
                omega: *w,
                candidates: vec![(*w, None)],
            })
        }
        _ => {}
    }
    let solver = SolverConfig {
        seed: cfg.seed,
        ..cfg.solver.clone()
    };
    let inner = CvConfig {
        folds: cfg.inner_folds,
        repeats: 1,
        seed: inner_seed,
        stepwise: cfg.cv.stepwise.clone(),
        n_boot: 1,
        level: cfg.cv.level,
    };
    let y: Vec<u8> = train.iter().map(|&i| data.labels[i]).collect();
    let mut means = Vec::with_capacity(grid.len());
    for &w in &grid {
        let report = repeated_cv(&y, &inner, |split| {
            let fit_rows: Vec<usize> = split.train.iter().map(|&i| train[i]).collect();
            let eval_rows: Vec<usize> = split.test.iter().map(|&i| train[i]).collect();
            let fit = supervised_fit(data, features, base, &solver, &fit_rows, w)?;
            Ok(design(&data.covariates, Some(&fit.model.factors[PATIENT]), features, &fit_rows, &eval_rows))
        })?;
        means.push((w, report.mean_auc));
    }
    Ok(OmegaSelection {
        omega: select_omega(&means)?,
        candidates: means.into_iter().map(|(w, m)| (w, Some(m))).collect(),
    })
}

/// Cross-validates fixed features: the patient factor of `model` (rows
/// named by `patient_ids`) and/or the covariates of `cohort`. Patients
/// without a label in `cohort` are an error.
pub fn evaluate_model(
    model: &CPModel,
    patient_ids: &[String],
    cohort: &CohortTable,
    features: FeatureSet,
    cv: &CvConfig,
) -> Result<CvReport> {
    let u = &model.factors[PATIENT];
    if u.nrows() != patient_ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} patient names for a patient factor with {} rows",
            patient_ids.len(),
            u.nrows()
        )));
    }
    let labels_by_id = cohort.labels.as_ref().ok_or_else(|| Error::Config("cohort has no outcome labels".into()))?;
    let mut labels = Vec::with_capacity(patient_ids.len());
    let mut covariates = Array2::zeros((patient_ids.len(), CovariateVector::NAMES.len()));
    for (i, id) in patient_ids.iter().enumerate() {
        let missing = || Error::DimensionMismatch(format!("patient `{id}` is not in the cohort"));
        labels.push(*labels_by_id.get(id).ok_or_else(missing)?);
        let c = cohort.covariates.get(id).ok_or_else(missing)?;
        covariates.row_mut(i).assign(&ndarray::aview1(&c.to_array()));
    }
    let u = features.uses_phenotypes().then_some(u);
    repeated_cv(&labels, cv, |split| Ok(design(&covariates, u, features, split.train, split.test)))
}

/// Most frequent value; ties go to the smaller value.
fn modal_omega(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    for chunk in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, n)| chunk.len() > n) {
            best = Some((chunk[0], chunk.len()));
        }
    }
    best.map(|b| b.0)
}

struct CellResult {
    report: EvalReport,
    /// Full-data model behind the phenotype report and trace.
    model: Option<FactorizeOutput>,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a PreparedData,
    solver: SolverConfig,
    cv: CvConfig,
    base: Option<FactorizeOutput>,
}

impl Runner<'_> {
    fn inner_seed(&self, rep: usize, fold: usize) -> u64 {
        substream(self.cfg.seed, Domain::InnerFolds, (rep * self.cv.folds + fold) as u64).next_u64()
    }

    fn lengths(&self, m: &CPModel) -> Result<LengthReport> {
        let t = &self.data.tensor;
        export_phenotypes(m, &t.labels[DIAGNOSIS], &t.labels[MEDICATION], self.cfg.display_threshold).map(|e| e.lengths)
    }

    fn evaluate(&self, cell: Cell) -> Result<CellResult> {
        let data = self.data;
        let features = cell.features;
        let mut folds = Vec::new();
        let base = self.base.as_ref();
        let base_u = base.map(|b| &b.model.factors[PATIENT]);

        if !features.uses_phenotypes() || !cell.supervised {
            let u = if features.uses_phenotypes() { base_u } else { None };
            let cv = repeated_cv(&data.labels, &self.cv, |split| {
                folds.push(FoldRecord {
                    rep: split.rep,
                    fold: split.fold,
                    n_train: split.train.len(),
                    n_test: split.test.len(),
                    omega: u.map(|_| 0.0),
                    iterations: None,
                    selection: None,
                });
                Ok(design(&data.covariates, u, features, split.train, split.test))
            })?;
            let (model, lengths) = match (features.uses_phenotypes(), base) {
                (true, Some(b)) => (Some(b.clone()), Some(self.lengths(&b.model)?)),
                _ => (None, None),
            };
            return Ok(CellResult {
                report: EvalReport {
                    cell: cell.name(),
                    correspondence: data.correspondence,
                    features,
                    supervised: false,
                    cv,
                    omega: model.as_ref().map(|_| 0.0),
                    folds,
                    lengths,
                    factorized: model.is_some(),
                },
                model,
            });
        }

        let base = base.ok_or_else(|| Error::Config("supervised cell without an unsupervised model".into()))?;
        let cv = repeated_cv(&data.labels, &self.cv, |split| {
            let selection = tune_omega(
                data,
                features,
                &base.model,
                self.cfg,
                split.train,
                self.inner_seed(split.rep, split.fold),
            )
            .map_err(|e| e.at_stage("tune_omega"))?;
            let fit = supervised_fit(data, features, &base.model, &self.solver, split.train, selection.omega)?;
            folds.push(FoldRecord {
                rep: split.rep,
                fold: split.fold,
                n_train: split.train.len(),
                n_test: split.test.len(),
                omega: Some(selection.omega),
                iterations: Some(fit.trace.iterations()),
                selection: Some(selection),
            });
            Ok(design(&data.covariates, Some(&fit.model.factors[PATIENT]), features, split.train, split.test))
        })?;
        let chosen: Vec<f64> = folds.iter().filter_map(|f| f.omega).collect();
        let omega = modal_omega(&chosen).ok_or(Error::EmptyInput("omega selections"))?;
        let all: Vec<usize> = (0..data.labels.len()).collect();
        let full = supervised_fit(data, features, &base.model, &self.solver, &all, omega)?;
        let lengths = self.lengths(&full.model)?;
        Ok(CellResult {
            report: EvalReport {
                cell: cell.name(),
                correspondence: data.correspondence,
                features,
                supervised: true,
                cv,
                omega: Some(omega),
                folds,
                lengths: Some(lengths),
                factorized: true,
            },
            model: Some(full),
        })
    }
}

/// Runs the evaluation grid of one configuration and writes all artifacts
/// under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    run_prepared(cfg, &data)
}

/// [`run_experiment`] on data that has already been prepared.
pub fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let cells = grid_cells(cfg);
    let solver = SolverConfig {
        seed: cfg.seed,
        omega: 0.0,
        ..cfg.solver.clone()
    };
    let base = if cells.iter().any(|c| c.features.uses_phenotypes()) {
        Some(factorize(&data.tensor, &solver, None).map_err(|e| e.at_stage("factorize"))?)
    } else {
        None
    };
    let runner = Runner {
        cfg,
        data,
        solver,
        cv: CvConfig {
            seed: cfg.seed,
            ..cfg.cv.clone()
        },
        base,
    };

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut reports = Vec::with_capacity(cells.len());
    for cell in cells {
        let result = runner.evaluate(cell).map_err(|e| e.at_stage("evaluate"))?;
        write_cell(data, &result, out).map_err(|e| e.at_stage("write"))?;
        reports.push(result.report);
    }
    let summary = summary_text(cfg, data, &reports);
    let path = out.join("summary.tsv");
    std::fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    let path = out.join("tensor_stats.json");
    std::fs::write(&path, serde_json::to_string_pretty(&data.stats)?).map_err(|e| Error::io(&path, e))?;
    Ok(ExperimentOutput {
        reports,
        stats: data.stats.clone(),
        summary,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_cell(data: &PreparedData, result: &CellResult, out: &Path) -> Result<()> {
    let r = &result.report;
    let dir = out.join(format!("{}_{}", data.correspondence.short_name(), r.cell));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("report.json"), &serde_json::to_string_pretty(r)?)?;

    let mut folds = String::from("rep\tfold\tn_train\tn_test\tauc\tomega\titerations\tselected_terms\n");
    for (k, f) in r.folds.iter().enumerate() {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let _ = writeln!(
            folds,
            "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}",
            f.rep,
            f.fold,
            f.n_train,
            f.n_test,
            r.cv.fold_aucs[k],
            opt(f.omega.map(|w| w.to_string())),
            opt(f.iterations.map(|n| n.to_string())),
            r.cv.selected_terms[k].join(",")
        );
    }
    write(&dir.join("folds.tsv"), &folds)?;

    if let Some(fit) = &result.model {
        let threshold = r.lengths.as_ref().map_or(crate::cp::DEFAULT_DISPLAY_THRESHOLD, |l| l.threshold);
        write_model_artifacts(fit, &data.tensor.labels, threshold, &dir)?;
    }
    Ok(())
}

/// Writes `model.json`, `trace.tsv` and `phenotypes.tsv` into `dir`.
pub fn write_model_artifacts(fit: &FactorizeOutput, labels: &[Vec<String>; 3], threshold: f64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fit.model.save_json(&dir.join("model.json"), Some(labels))?;
    fit.trace.write_tsv(&dir.join("trace.tsv"))?;
    let export = export_phenotypes(&fit.model, &labels[DIAGNOSIS], &labels[MEDICATION], threshold)?;
    write(&dir.join("phenotypes.tsv"), &phenotype_report_text(&export))
}

fn summary_text(cfg: &ExperimentConfig, data: &PreparedData, reports: &[EvalReport]) -> String {
    let s = &data.stats;
    let sol = &cfg.solver;
    let grid: Vec<String> = cfg.omega_grid.iter().map(|w| w.to_string()).collect();
    let mut out = String::new();
    let mut meta = |k: &str, v: String| {
        let _ = writeln!(out, "# {k}\t{v}");
    };
    meta("phenotensor", env!("CARGO_PKG_VERSION").into());
    meta("seed", cfg.seed.to_string());
    meta("correspondence", data.correspondence.short_name().into());
    meta(
        "tensor",
        format!(
            "{} patients ({} dropped without co-occurrences), {} diagnoses, {} medications, {} nonzeros",
            s.n_patients,
            data.dropped_patients.len(),
            data.tensor.dims[DIAGNOSIS],
            data.tensor.dims[MEDICATION],
            data.tensor.nnz()
        ),
    );
    meta("outcome", format!("death within {} years of diagnosis; encounters within {} year(s)", cfg.outcome.horizon_years, cfg.outcome.window_years));
    meta("truncation", format!("counts capped at the nearest-rank {} percentile of nonzero counts", cfg.truncation_percentile));
    meta(
        "solver",
        format!(
            "rank {}, block projected gradient, max {} outer iterations, rel_tol {}, backtracking {}x{} from {}/L",
            sol.rank, sol.max_outer_iters, sol.rel_tol, sol.backtrack_shrink, sol.backtrack_max, sol.backtrack_initial
        ),
    );
    meta("normalization", NORMALIZATION.into());
    meta("omega_grid", grid.join(","));
    meta(
        "omega_tuning",
        format!("inner {}-fold CV on each outer training set, highest mean AUC, ties to the smaller omega", cfg.inner_folds),
    );
    meta(
        "supervision",
        "transductive: all patients factorized, training-fold labels only; warm start from the unsupervised model".into(),
    );
    meta("cv", format!("{} folds x {} repeats, stratified by outcome", cfg.cv.folds, cfg.cv.repeats));
    meta(
        "stepwise",
        format!("likelihood-ratio entry p < {}, exit p > {}", cfg.cv.stepwise.entry, cfg.cv.stepwise.exit),
    );
    meta(
        "bootstrap",
        format!("{} resamples of fold AUCs, {} nearest-rank percentile interval", cfg.cv.n_boot, cfg.cv.level),
    );
    let thr = cfg.display_threshold;
    let _ = writeln!(
        out,
        "cell\tfeatures\tsupervision\tomega\tmean_auc\tci_lower\tci_upper\tdx_len_gt0\tmed_len_gt0\tdx_len_gt{thr}\tmed_len_gt{thr}"
    );
    for r in reports {
        let supervision = match (r.factorized, r.supervised) {
            (false, _) => "none",
            (true, false) => "unsupervised",
            (true, true) => "supervised",
        };
        let len = |f: fn(&LengthReport) -> f64| r.lengths.as_ref().map_or("-".into(), |l| format!("{:.3}", f(l)));
        let _ = writeln!(
            out,
            "{}_{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
            data.correspondence.short_name(),
            r.cell,
            r.features.name(),
            supervision,
            r.omega.map_or("-".into(), |w| w.to_string()),
            r.cv.mean_auc,
            r.cv.ci_lower,
            r.cv.ci_upper,
            len(|l| l.diagnoses_nonzero),
            len(|l| l.medications_nonzero),
            len(|l| l.diagnoses_above),
            len(|l| l.medications_above),
        );
    }
    out
}
