use std::collections::BTreeSet;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{check_labels, fit_logistic_from, lr_pvalue, FitOptions, GlmFit};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepwiseConfig {
    pub entry: f64,
    pub exit: f64,
    pub fit: FitOptions,
}

impl Default for StepwiseConfig {
    fn default() -> Self {
        StepwiseConfig {
            entry: 0.05,
            exit: 0.10,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Enter,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub term: usize,
    pub action: Action,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseResult {
    /// Selected columns of the candidate matrix, ascending.
    pub selected: Vec<usize>,
    pub steps: Vec<StepLog>,
    /// Fit on the selected columns only (intercept, then `selected` order).
    pub fit: GlmFit,
    pub cycle_detected: bool,
}

impl StepwiseResult {
    /// Linear predictor for rows of the full candidate matrix.
    pub fn predict_linear(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.fit.predict_linear(x.select(Axis(1), &self.selected).view())
    }
}

/// Fit on a subset of columns, warm-started from a fit on a related subset.
struct Fitter<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [u8],
    opts: FitOptions,
}

impl Fitter<'_> {
    fn fit(&self, cols: &[usize], warm: Option<(&[usize], &GlmFit)>) -> Result<GlmFit> {
        let sub = self.x.select(Axis(1), cols);
        let start = warm.map(|(wc, wf)| {
            let mut s = vec![0.0; cols.len() + 1];
            s[0] = wf.coefficients[0];
            for (q, c) in cols.iter().enumerate() {
                if let Some(pos) = wc.iter().position(|w| w == c) {
                    s[q + 1] = wf.coefficients[pos + 1];
                }
            }
            s
        });
        fit_logistic_from(sub.view(), self.y, &self.opts, start.as_deref())
    }
}

/// Forward/backward stepwise selection with likelihood-ratio tests.
///
/// Each round first tries to add the excluded column with the smallest
/// p-value (if below `entry`), then to remove the included column with the
/// largest p-value (if above `exit`). Ties go to the lowest column index.
/// Stops when a round changes nothing or revisits an earlier state.
pub fn stepwise_select(x: ArrayView2<f64>, y: &[u8], cfg: &StepwiseConfig) -> Result<StepwiseResult> {
    check_labels(y)?;
    let p = x.ncols();
    let f = Fitter {
        x,
        y,
        opts: cfg.fit,
    };
    let mut included: Vec<usize> = Vec::new();
    let mut current = f.fit(&included, None)?;
    let mut steps = Vec::new();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    seen.insert(included.clone());
    let mut cycle_detected = false;

    loop {
        let mut changed = false;

        let mut best: Option<(usize, f64, GlmFit)> = None;
        for j in (0..p).filter(|j| !included.contains(j)) {
            let cols = with(&included, j);
            let cand = f.fit(&cols, Some((&included, &current)))?;
            let pv = lr_pvalue(&cand, &current, 1)?;
            if best.as_ref().is_none_or(|(_, bp, _)| pv < *bp) {
                best = Some((j, pv, cand));
            }
        }
        if let Some((j, pv, cand)) = best {
            if pv < cfg.entry {
                included = with(&included, j);
                current = cand;
                steps.push(StepLog {
                    term: j,
                    action: Action::Enter,
                    p_value: pv,
                });
                changed = true;
            }
        }

        let mut worst: Option<(usize, f64, GlmFit)> = None;
        for &j in &included {
            let cols = without(&included, j);
            let reduced = f.fit(&cols, Some((&included, &current)))?;
            let pv = lr_pvalue(&current, &reduced, 1)?;
            if worst.as_ref().is_none_or(|(_, wp, _)| pv > *wp) {
                worst = Some((j, pv, reduced));
            }
        }
        if let Some((j, pv, reduced)) = worst {
            if pv > cfg.exit {
                included = without(&included, j);
                current = reduced;
                steps.push(StepLog {
                    term: j,
                    action: Action::Exit,
                    p_value: pv,
                });
                changed = true;
            }
        }

        if !changed {
            break;
        }
        if !seen.insert(included.clone()) {
            cycle_detected = true;
            break;
        }
    }

    Ok(StepwiseResult {
        selected: included,
        steps,
        fit: current,
        cycle_detected,
    })
}

fn with(cols: &[usize], j: usize) -> Vec<usize> {
    let mut v = cols.to_vec();
    v.push(j);
    v.sort_unstable();
    v
}

fn without(cols: &[usize], j: usize) -> Vec<usize> {
    cols.iter().copied().filter(|&c| c != j).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, unit_f64, Domain};
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_features_gives_intercept_only() {
        let x = Array2::<f64>::zeros((6, 0));
        let r = stepwise_select(x.view(), &[0, 1, 0, 1, 1, 0], &StepwiseConfig::default()).unwrap();
        assert!(r.selected.is_empty() && r.steps.is_empty());
        assert!(r.fit.coefficients[0].abs() < 1e-10);
    }

    #[test]
    fn strong_term_enters_first() {
        let mut rng = substream(11, Domain::Simulation, 0);
        let n = 300;
        let mut x = Array2::<f64>::zeros((n, 4));
        let mut y = vec![0u8; n];
        for i in 0..n {
            for j in 0..4 {
                x[[i, j]] = StandardNormal.sample(&mut rng);
            }
            let z = 2.0 * x[[i, 2]];
            y[i] = (unit_f64(&mut rng) < super::super::sigmoid(z)) as u8;
        }
        let r = stepwise_select(x.view(), &y, &StepwiseConfig::default()).unwrap();
        assert_eq!(r.steps[0].term, 2);
        assert_eq!(r.steps[0].action, Action::Enter);
        assert!(r.selected.contains(&2));
        let eta = r.predict_linear(x.view());
        assert_eq!(eta.len(), n);
    }
}
