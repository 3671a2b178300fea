//! Supervised non-negative CP factorization by block projected gradient.

mod factorize;
mod objective;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use factorize::{factorize, factorize_from, init_factors, FactorizeOutput};
pub use objective::{combined_objective, logistic_nll, other_mode_gradient, patient_mode_gradient, refit_beta, BetaRefit};

use crate::{kv, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rank: usize,
    pub omega: f64,
    pub max_outer_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub backtrack_shrink: f64,
    /// Multiplier on the inverse block Lipschitz bound for the first trial step.
    pub backtrack_initial: f64,
    pub backtrack_max: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rank: 50,
            omega: 0.0,
            max_outer_iters: 500,
            rel_tol: 1e-4,
            seed: 0,
            backtrack_shrink: 0.5,
            backtrack_initial: 1.0,
            backtrack_max: 30,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return bad(format!("omega must be finite and >= 0, got {}", self.omega));
        }
        if !(self.rel_tol > 0.0) {
            return bad(format!("rel_tol must be > 0, got {}", self.rel_tol));
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return bad(format!("backtrack_shrink must lie in (0, 1), got {}", self.backtrack_shrink));
        }
        if !(self.backtrack_initial > 0.0 && self.backtrack_initial.is_finite()) {
            return bad(format!("backtrack_initial must be > 0, got {}", self.backtrack_initial));
        }
        Ok(())
    }

    /// Applies one `key = value` setting; returns false for keys it does not know.
    pub(crate) fn apply(&mut self, line: &kv::KvLine, source: &Path) -> Result<bool> {
        match line.key.as_str() {
            "rank" => self.rank = kv::value(line, source)?,
            "omega" => self.omega = kv::value(line, source)?,
            "max_outer_iters" => self.max_outer_iters = kv::value(line, source)?,
            "rel_tol" => self.rel_tol = kv::value(line, source)?,
            "seed" => self.seed = kv::value(line, source)?,
            "backtrack_shrink" => self.backtrack_shrink = kv::value(line, source)?,
            "backtrack_initial" => self.backtrack_initial = kv::value(line, source)?,
            "backtrack_max" => self.backtrack_max = kv::value(line, source)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv_text(text: &str, source: &Path) -> Result<Self> {
        let mut cfg = SolverConfig::default();
        for line in kv::parse(text, source)? {
            if !cfg.apply(&line, source)? {
                return Err(kv::unknown(&line, source));
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

/// Labels (by patient row), optional fixed covariates, and the current
/// logistic coefficients `[intercept, one per component, one per covariate]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supervision {
    pub labels: BTreeMap<usize, u8>,
    pub covariates: Option<Array2<f64>>,
    pub beta: Vec<f64>,
}

impl Supervision {
    pub fn new(labels: BTreeMap<usize, u8>, covariates: Option<Array2<f64>>, rank: usize) -> Self {
        let c = covariates.as_ref().map_or(0, |x| x.ncols());
        Supervision {
            labels,
            covariates,
            beta: vec![0.0; 1 + rank + c],
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.as_ref().map_or(0, |x| x.ncols())
    }

    pub fn validate(&self, n_patients: usize, rank: usize) -> Result<()> {
        if let Some((&i, _)) = self.labels.iter().find(|(&i, _)| i >= n_patients) {
            return Err(Error::DimensionMismatch(format!("label for patient row {i}, tensor has {n_patients}")));
        }
        if let Some((_, &v)) = self.labels.iter().find(|(_, &v)| v > 1) {
            return Err(Error::Config(format!("labels must be 0 or 1, found {v}")));
        }
        if let Some(x) = &self.covariates {
            if x.nrows() != n_patients {
                return Err(Error::DimensionMismatch(format!("{} covariate rows for {n_patients} patients", x.nrows())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("covariates".into()));
            }
        }
        if self.beta.len() != 1 + rank + self.n_covariates() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries, expected {}",
                self.beta.len(),
                1 + rank + self.n_covariates()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("beta".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub frobenius: f64,
    /// Unweighted logistic negative log-likelihood (0 without supervision).
    pub logistic: f64,
    /// Accepted step size per mode (0 when every trial step was rejected).
    pub steps: [f64; 3],
    /// Log-likelihood of the refit coefficients, when supervision is active.
    pub beta_loglik: Option<f64>,
    /// Smallest factor entry after the iteration.
    pub min_entry: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// `max_outer_iters` was 0.
    NotRun,
}

/// Row 0 holds the starting point; row `t` the state after outer iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub rank: usize,
    pub omega: f64,
    pub rel_tol: f64,
    pub max_outer_iters: usize,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    pub stop: StopReason,
}

impl FitTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.iter)
    }

    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].objective <= w[0].objective)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# rank={} omega={} rel_tol={} max_outer_iters={} seed={} stop={:?}",
            self.rank, self.omega, self.rel_tol, self.max_outer_iters, self.seed, self.stop
        );
        out.push_str("iter\tobjective\tfrobenius\tlogistic\tstep_patient\tstep_diagnosis\tstep_medication\tbeta_loglik\tmin_entry\n");
        for r in &self.rows {
            let ll = r.beta_loglik.map_or_else(|| "NA".to_string(), |v| format!("{v:e}"));
            let _ = writeln!(
                out,
                "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{}\t{:e}",
                r.iter, r.objective, r.frobenius, r.logistic, r.steps[0], r.steps[1], r.steps[2], ll, r.min_entry
            );
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Objective column of a trace file written by [`FitTrace::write_tsv`].
    pub fn read_objectives(path: &Path) -> Result<Vec<f64>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('#') && !l.starts_with("iter"))
            .map(|(n, l)| {
                l.split('\t').nth(1).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: "missing objective column".into(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SolverConfig::default();
        assert_eq!(c.rank, 50);
        assert_eq!(c.max_outer_iters, 500);
        assert_eq!(c.rel_tol, 1e-4);
        assert_eq!((c.backtrack_shrink, c.backtrack_initial, c.backtrack_max), (0.5, 1.0, 30));
    }

    #[test]
    fn config_file() {
        let p = Path::new("solver.conf");
        let c = SolverConfig::from_kv_text("rank = 4\nomega=0.5\nseed = 7 # fixed\nbacktrack_max = 10\n", p).unwrap();
        assert_eq!((c.rank, c.omega, c.seed, c.backtrack_max), (4, 0.5, 7, 10));
        assert!(SolverConfig::from_kv_text("rank = 0\n", p).is_err());
        assert!(SolverConfig::from_kv_text("omega = -1\n", p).is_err());
        assert!(matches!(SolverConfig::from_kv_text("\nranks = 3\n", p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn supervision_validation() {
        let mut labels = BTreeMap::new();
        labels.insert(3, 1);
        let s = Supervision::new(labels, None, 2);
        assert_eq!(s.beta.len(), 3);
        assert!(s.validate(4, 2).is_ok());
        assert!(s.validate(3, 2).is_err());
        assert!(s.validate(4, 3).is_err());
    }
}
