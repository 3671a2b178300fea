use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{OutcomeRule, PrevalenceFilter};
use crate::cp::DEFAULT_DISPLAY_THRESHOLD;
use crate::logit::CvConfig;
use crate::solver::SolverConfig;
use crate::tensor::Correspondence;
use crate::{kv, Error, Result};

pub const DEFAULT_TRUNCATION_PERCENTILE: f64 = 0.99;
pub const DEFAULT_INNER_FOLDS: usize = 3;
pub const DEFAULT_OMEGA_GRID: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub encounters: PathBuf,
    pub demographics: PathBuf,
    pub income: PathBuf,
    pub medication_map: Option<PathBuf>,
    pub indications: Option<PathBuf>,
    pub extra_indications: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub inputs: InputPaths,
    pub correspondence: Correspondence,
    pub use_covariates: bool,
    /// 0 requests the unsupervised cells; positive entries are tuning candidates.
    pub omega_grid: Vec<f64>,
    /// `solver.omega` and `solver.seed` are ignored; see `omega_grid` and `seed`.
    pub solver: SolverConfig,
    /// `cv.seed` is ignored; see `seed`.
    pub cv: CvConfig,
    pub inner_folds: usize,
    pub prevalence: PrevalenceFilter,
    pub outcome: OutcomeRule,
    pub truncation_percentile: f64,
    pub display_threshold: f64,
    pub output_dir: PathBuf,
    /// Master seed for factor initialization, fold assignment, and bootstrap.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            inputs: InputPaths::default(),
            correspondence: Correspondence::Equal,
            use_covariates: true,
            omega_grid: DEFAULT_OMEGA_GRID.to_vec(),
            solver: SolverConfig::default(),
            cv: CvConfig::default(),
            inner_folds: DEFAULT_INNER_FOLDS,
            prevalence: PrevalenceFilter::default(),
            outcome: OutcomeRule::default(),
            truncation_percentile: DEFAULT_TRUNCATION_PERCENTILE,
            display_threshold: DEFAULT_DISPLAY_THRESHOLD,
            output_dir: PathBuf::from("results"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.omega_grid.is_empty() {
            return bad("omega_grid is empty".into());
        }
        if let Some(w) = self.omega_grid.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return bad(format!("omega_grid entries must be finite and >= 0, got {w}"));
        }
        if self.inner_folds < 2 {
            return bad(format!("inner_folds must be at least 2, got {}", self.inner_folds));
        }
        if self.cv.folds < 2 || self.cv.repeats == 0 {
            return bad(format!("need folds >= 2 and repeats >= 1, got {} x {}", self.cv.folds, self.cv.repeats));
        }
        if !(self.truncation_percentile > 0.0 && self.truncation_percentile <= 1.0) {
            return bad(format!("truncation_percentile must lie in (0, 1], got {}", self.truncation_percentile));
        }
        if !(self.display_threshold >= 0.0 && self.display_threshold.is_finite()) {
            return bad(format!("display_threshold must be >= 0, got {}", self.display_threshold));
        }
        for (name, f) in [
            ("dx_min_prevalence", self.prevalence.dx_min_frac),
            ("med_min_prevalence", self.prevalence.med_min_frac),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if self.correspondence == Correspondence::Indicated && self.inputs.indications.is_none() {
            return bad("correspondence = indicated requires an `indications` file".into());
        }
        self.solver.validate()
    }

    /// Positive grid entries, ascending and deduplicated.
    pub fn positive_omegas(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.omega_grid.iter().copied().filter(|&w| w > 0.0).collect();
        w.sort_by(f64::total_cmp);
        w.dedup();
        w
    }

    /// Parses a `key = value` file. Relative paths are taken relative to the
    /// file's directory.
    pub fn from_kv_text(text: &str, source: &Path) -> Result<Self> {
        let base = source.parent().unwrap_or_else(|| Path::new(""));
        let path = |v: &str| base.join(v);
        let mut cfg = ExperimentConfig::default();
        for line in kv::parse(text, source)? {
            let v = line.value.as_str();
            match line.key.as_str() {
                "encounters" => cfg.inputs.encounters = path(v),
                "demographics" => cfg.inputs.demographics = path(v),
                "income" => cfg.inputs.income = path(v),
                "medication_map" => cfg.inputs.medication_map = Some(path(v)),
                "indications" => cfg.inputs.indications = Some(path(v)),
                "extra_indications" => cfg.inputs.extra_indications = Some(path(v)),
                "output_dir" => cfg.output_dir = path(v),
                "correspondence" => cfg.correspondence = kv::value(&line, source)?,
                "use_covariates" => cfg.use_covariates = kv::value(&line, source)?,
                "omega_grid" => cfg.omega_grid = kv::list(&line, source)?,
                "seed" => cfg.seed = kv::value(&line, source)?,
                "inner_folds" => cfg.inner_folds = kv::value(&line, source)?,
                "folds" => cfg.cv.folds = kv::value(&line, source)?,
                "repeats" => cfg.cv.repeats = kv::value(&line, source)?,
                "n_boot" => cfg.cv.n_boot = kv::value(&line, source)?,
                "ci_level" => cfg.cv.level = kv::value(&line, source)?,
                "entry_p" => cfg.cv.stepwise.entry = kv::value(&line, source)?,
                "exit_p" => cfg.cv.stepwise.exit = kv::value(&line, source)?,
                "truncation_percentile" => cfg.truncation_percentile = kv::value(&line, source)?,
                "display_threshold" => cfg.display_threshold = kv::value(&line, source)?,
                "dx_min_prevalence" => cfg.prevalence.dx_min_frac = kv::value(&line, source)?,
                "med_min_prevalence" => cfg.prevalence.med_min_frac = kv::value(&line, source)?,
                "forced_medications" => cfg.prevalence.forced_medications = kv::list::<String>(&line, source)?.into_iter().collect(),
                "excluded_codes" => cfg.prevalence.excluded_codes = kv::list(&line, source)?,
                "allowed_codes" => cfg.prevalence.allowed_codes = kv::list::<String>(&line, source)?.into_iter().collect(),
                "horizon_years" => cfg.outcome.horizon_years = kv::value(&line, source)?,
                "window_years" => cfg.outcome.window_years = kv::value(&line, source)?,
                "omega" => {
                    return Err(Error::Parse {
                        path: source.to_path_buf(),
                        line: line.line,
                        message: "experiments take `omega_grid`, not `omega`".into(),
                    })
                }
                _ => {
                    if !cfg.solver.apply(&line, source)? {
                        return Err(kv::unknown(&line, source));
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_text(&text, path)
    }
}
