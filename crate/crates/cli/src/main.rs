use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phenotensor::cohort::CohortTable;
use phenotensor::logit::CvConfig;
use phenotensor::pipeline::{
    build_data, evaluate_model, load_cohort, report_table1, run_experiment, simulate_cohort, stats_both_modes,
    write_model_artifacts, CountModel, ExperimentConfig, FeatureSet, SyntheticSpec, Table1Column,
};
use phenotensor::solver::{factorize, Supervision};
use phenotensor::tensor::{read_tensor, write_tensor, IndicationMap, PATIENT};
use phenotensor::{CPModel, Correspondence, Error, ErrorClass, Result, SolverConfig};

#[derive(Parser)]
#[command(name = "phenotensor", version, about = "Supervised tensor phenotyping of cohort co-occurrence data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load encounter, demographic and income tables into a cohort file.
    Ingest(IngestArgs),
    /// Count diagnosis-medication co-occurrences into a sparse tensor.
    BuildTensor(BuildTensorArgs),
    /// Fit a non-negative CP model, optionally supervised.
    Factorize(FactorizeArgs),
    /// Cross-validate mortality prediction from a fitted model.
    Evaluate(EvaluateArgs),
    /// Run the full evaluation grid described by a config file.
    Run(RunArgs),
    /// Write a synthetic cohort with planted phenotypes.
    Simulate(SimulateArgs),
    /// Tabulate tensor characteristics under both correspondence modes.
    Report(ReportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Experiment config supplying input paths and filters; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    encounters: Option<PathBuf>,
    #[arg(long)]
    demographics: Option<PathBuf>,
    #[arg(long)]
    income: Option<PathBuf>,
    #[arg(long)]
    medication_map: Option<PathBuf>,
    #[arg(long)]
    dx_min_prevalence: Option<f64>,
    #[arg(long)]
    med_min_prevalence: Option<f64>,
    #[arg(long)]
    horizon_years: Option<u32>,
    #[arg(long)]
    window_years: Option<u32>,
}

impl InputArgs {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        let p = &mut cfg.inputs;
        for (slot, flag) in [
            (&mut p.encounters, &self.encounters),
            (&mut p.demographics, &self.demographics),
            (&mut p.income, &self.income),
        ] {
            if let Some(v) = flag {
                *slot = v.clone();
            }
        }
        if self.medication_map.is_some() {
            p.medication_map.clone_from(&self.medication_map);
        }
        for (name, path) in [("encounters", &p.encounters), ("demographics", &p.demographics), ("income", &p.income)] {
            if path.as_os_str().is_empty() {
                return Err(Error::Config(format!("no {name} table given (use --{name} or --config)")));
            }
        }
        if let Some(v) = self.dx_min_prevalence {
            cfg.prevalence.dx_min_frac = v;
        }
        if let Some(v) = self.med_min_prevalence {
            cfg.prevalence.med_min_frac = v;
        }
        if let Some(v) = self.horizon_years {
            cfg.outcome.horizon_years = v;
        }
        if let Some(v) = self.window_years {
            cfg.outcome.window_years = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Destination cohort file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Equal,
    Indicated,
}

impl From<Mode> for Correspondence {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Equal => Correspondence::Equal,
            Mode::Indicated => Correspondence::Indicated,
        }
    }
}

#[derive(Args)]
struct BuildTensorArgs {
    /// Cohort file written by `ingest`.
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, value_enum, default_value = "equal")]
    correspondence: Mode,
    #[arg(long)]
    indications: Option<PathBuf>,
    #[arg(long, requires = "indications")]
    extra_indications: Option<PathBuf>,
    #[arg(long, default_value_t = phenotensor::pipeline::DEFAULT_TRUNCATION_PERCENTILE)]
    truncation_percentile: f64,
    /// Destination tensor file.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON file for the tensor statistics.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct FactorizeArgs {
    /// Tensor file written by `build-tensor`.
    #[arg(long)]
    tensor: PathBuf,
    /// Solver settings as `key = value` lines; flags override them.
    #[arg(long)]
    solver_config: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    /// Weight of the supervised term; positive values need `--cohort`.
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    max_outer_iters: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cohort supplying outcome labels (and covariates) for supervision.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Include the demographic covariates in the supervised term.
    #[arg(long)]
    use_covariates: bool,
    #[arg(long, default_value_t = phenotensor::cp::DEFAULT_DISPLAY_THRESHOLD)]
    display_threshold: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Cov,
    Phen,
    PhenCov,
}

impl From<Features> for FeatureSet {
    fn from(f: Features) -> Self {
        match f {
            Features::Cov => FeatureSet::Covariates,
            Features::Phen => FeatureSet::Phenotypes,
            Features::PhenCov => FeatureSet::PhenotypesCovariates,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model file written by `factorize` or `run`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, value_enum, default_value = "phen-cov")]
    features: Features,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON file for the full report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    correspondence: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Counts {
    Poisson,
    Rounded,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_patients: Option<usize>,
    #[arg(long)]
    n_dx: Option<usize>,
    #[arg(long)]
    n_med: Option<usize>,
    #[arg(long)]
    true_rank: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum)]
    count_model: Option<Counts>,
    #[arg(long)]
    count_scale: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// One config per cohort column; each needs an `indications` file.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Column names, in config order; defaults to the config file stems.
    #[arg(long)]
    name: Vec<String>,
    /// Optional JSON file for the table.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let cfg = a.input.experiment()?;
    let cohort = load_cohort(&cfg)?;
    cohort.save_json(&a.out)?;
    let r = &cohort.report;
    println!(
        "{} patients, {} encounters, {} rejected rows, {} incomes imputed",
        cohort.n_patients(),
        cohort.encounters.len(),
        r.rejected_rows.len(),
        r.income_imputed
    );
    Ok(())
}

fn build_tensor(a: &BuildTensorArgs) -> Result<()> {
    let cohort = CohortTable::load_json(&a.cohort)?;
    let indications = a
        .indications
        .as_deref()
        .map(|p| IndicationMap::from_paths(p, a.extra_indications.as_deref()))
        .transpose()?;
    let data = build_data(&cohort, a.correspondence.into(), indications.as_ref(), a.truncation_percentile)?;
    write_tensor(&data.tensor, &a.out)?;
    if let Some(p) = &a.stats {
        write(p, &serde_json::to_string_pretty(&data.stats)?)?;
    }
    let s = &data.stats;
    println!(
        "{} patients x {} diagnoses x {} medications, {} nonzeros, {} dropped",
        s.n_patients,
        s.n_diagnoses,
        s.n_medications,
        data.tensor.nnz(),
        data.dropped_patients.len()
    );
    Ok(())
}

fn factorize_cmd(a: &FactorizeArgs) -> Result<()> {
    let tensor = read_tensor(&a.tensor)?;
    let mut cfg = match &a.solver_config {
        Some(p) => SolverConfig::from_path(p)?,
        None => SolverConfig::default(),
    };
    if let Some(v) = a.rank {
        cfg.rank = v;
    }
    if let Some(v) = a.omega {
        cfg.omega = v;
    }
    if let Some(v) = a.max_outer_iters {
        cfg.max_outer_iters = v;
    }
    if let Some(v) = a.rel_tol {
        cfg.rel_tol = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;

    let sup = if cfg.omega > 0.0 {
        let path = a
            .cohort
            .as_ref()
            .ok_or_else(|| Error::Config("a positive omega needs --cohort for outcome labels".into()))?;
        Some(supervision(&tensor.labels[PATIENT], &CohortTable::load_json(path)?, a.use_covariates, cfg.rank)?)
    } else {
        None
    };
    let fit = factorize(&tensor, &cfg, sup.as_ref())?;
    write_model_artifacts(&fit, &tensor.labels, a.display_threshold, &a.out_dir)?;
    let last = fit.trace.rows.last().map_or(f64::NAN, |r| r.objective);
    println!(
        "rank {}, {} iterations, objective {last:.6e}, stop: {:?}",
        cfg.rank,
        fit.trace.iterations(),
        fit.trace.stop
    );
    Ok(())
}

/// Labels every tensor patient from the cohort, in tensor row order.
fn supervision(ids: &[String], cohort: &CohortTable, use_covariates: bool, rank: usize) -> Result<Supervision> {
    let labels = cohort.labels.as_ref().ok_or_else(|| Error::Config("cohort has no outcome labels".into()))?;
    let mut y = std::collections::BTreeMap::new();
    let mut x = ndarray::Array2::zeros((ids.len(), phenotensor::CovariateVector::NAMES.len()));
    for (i, id) in ids.iter().enumerate() {
        let missing = || Error::DimensionMismatch(format!("patient `{id}` is not in the cohort"));
        y.insert(i, *labels.get(id).ok_or_else(missing)?);
        if use_covariates {
            let c = cohort.covariates.get(id).ok_or_else(missing)?;
            x.row_mut(i).assign(&ndarray::aview1(&c.to_array()));
        }
    }
    Ok(Supervision::new(y, use_covariates.then_some(x), rank))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (model, labels): (CPModel, _) = CPModel::load_json(&a.model)?;
    let labels = labels.ok_or_else(|| Error::Config(format!("{} has no patient labels", a.model.display())))?;
    let cohort = CohortTable::load_json(&a.cohort)?;
    let mut cv = CvConfig {
        folds: a.folds,
        repeats: a.repeats,
        seed: a.seed,
        ..CvConfig::default()
    };
    if let Some(n) = a.n_boot {
        cv.n_boot = n;
    }
    let report = evaluate_model(&model, &labels[PATIENT], &cohort, a.features.into(), &cv)?;
    if let Some(p) = &a.out {
        write(p, &serde_json::to_string_pretty(&report)?)?;
    }
    println!(
        "AUC {:.4} ({:.0}% CI {:.4} to {:.4}) over {} x {} folds",
        report.mean_auc,
        100.0 * report.level,
        report.ci_lower,
        report.ci_upper,
        report.repeats,
        report.folds
    );
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(&a.config)?;
    cfg.seed = a.seed;
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(m) = a.correspondence {
        cfg.correspondence = m.into();
    }
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    print!("{}", out.summary);
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec = SyntheticSpec {
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    if let Some(v) = a.n_patients {
        spec.n_patients = v;
    }
    if let Some(v) = a.n_dx {
        spec.n_dx = v;
    }
    if let Some(v) = a.n_med {
        spec.n_med = v;
    }
    if let Some(v) = a.true_rank {
        spec.true_rank = v;
        spec.label_coefficients.resize(v, 0.0);
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(m) = a.count_model {
        spec.count_model = match m {
            Counts::Poisson => CountModel::Poisson,
            Counts::Rounded => CountModel::Rounded,
        };
    }
    if let Some(v) = a.count_scale {
        spec.count_scale = v;
    }
    let sim = simulate_cohort(&spec, &a.out)?;
    let deaths = sim.truth.labels.iter().filter(|&&y| y == 1).count();
    println!(
        "{} patients ({deaths} deaths), rank {}; config at {}",
        spec.n_patients,
        spec.true_rank,
        sim.files.config.display()
    );
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    if !a.name.is_empty() && a.name.len() != a.config.len() {
        return Err(Error::Config(format!("{} names for {} configs", a.name.len(), a.config.len())));
    }
    let mut columns = Vec::new();
    for (k, path) in a.config.iter().enumerate() {
        let cfg = ExperimentConfig::from_path(path)?;
        let (all, ind) = stats_both_modes(&cfg)?;
        let cohort = match a.name.get(k) {
            Some(n) => n.clone(),
            None => path.file_stem().map_or_else(|| format!("cohort_{}", k + 1), |s| s.to_string_lossy().into_owned()),
        };
        columns.push(Table1Column { cohort, all, ind });
    }
    let table = report_table1(&columns);
    if let Some(p) = &a.json {
        write(p, &table.to_json()?)?;
    }
    print!("{}", table.text);
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Input => 1,
        ErrorClass::Numerical => 2,
        ErrorClass::Degenerate => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::BuildTensor(a) => build_tensor(a),
        Command::Factorize(a) => factorize_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_and_nonzero() {
        let codes = [ErrorClass::Input, ErrorClass::Numerical, ErrorClass::Degenerate].map(exit_code);
        assert_eq!(codes, [1, 2, 3]);
        assert_eq!(exit_code(Error::NonFinite("x".into()).class()), 2);
        assert_eq!(exit_code(Error::SingleClass.at_stage("cv").class()), 3);
    }
}
