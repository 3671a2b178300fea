//! Logistic regression, likelihood-ratio tests, stepwise selection and
//! cross-validated AUC.

mod chisq;
mod cv;
mod stepwise;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

pub use chisq::{chisq_sf, ln_gamma, lr_pvalue, regularized_gamma_q};
pub use cv::{auc, bootstrap_ci, repeated_cv, stratified_folds, CvConfig, CvReport, FoldDesign, Split};
pub use stepwise::{stepwise_select, Action, StepLog, StepwiseConfig, StepwiseResult};

use crate::linalg::{cholesky, cholesky_inverse, cholesky_solve, independent_columns};
use crate::{Error, Result};

/// Largest allowed |coefficient|, in the units of the supplied features.
pub const COEFFICIENT_BOUND: f64 = 30.0;
const ALIAS_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 100,
            tol: 1e-8,
            bound: COEFFICIENT_BOUND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    /// Intercept first, then one coefficient per feature column (0 when aliased).
    pub coefficients: Vec<f64>,
    /// Same layout as `coefficients`; NaN where the information matrix is singular.
    pub std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub separation: bool,
    pub iterations: usize,
    /// Feature columns dropped as linear combinations of earlier ones.
    pub aliased: Vec<usize>,
}

impl GlmFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict_linear(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                self.coefficients[0] + self.coefficients[1..].iter().zip(r.iter()).map(|(b, v)| b * v).sum::<f64>()
            })
            .collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of labels `y` under linear predictors `eta`.
pub fn log_likelihood(eta: &[f64], y: &[u8]) -> f64 {
    eta.iter().zip(y).map(|(&z, &t)| f64::from(t) * z - softplus(z)).sum()
}

pub(crate) fn check_labels(y: &[u8]) -> Result<()> {
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::Config(format!("labels must be 0 or 1, found {bad}")));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Maximum-likelihood logistic regression with an intercept added internally.
pub fn fit_logistic(x: ArrayView2<f64>, y: &[u8], opts: &FitOptions) -> Result<GlmFit> {
    fit_logistic_from(x, y, opts, None)
}

/// As [`fit_logistic`], starting Newton iterations from `start`
/// (intercept first, original feature units).
pub fn fit_logistic_from(x: ArrayView2<f64>, y: &[u8], opts: &FitOptions, start: Option<&[f64]>) -> Result<GlmFit> {
    let n = y.len();
    let p = x.ncols();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch(format!("{} feature rows for {n} labels", x.nrows())));
    }
    check_labels(y)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic design matrix".into()));
    }
    if let Some(s) = start {
        if s.len() != p + 1 {
            return Err(Error::DimensionMismatch(format!("start has {} values, expected {}", s.len(), p + 1)));
        }
    }

    // Columns are scaled by their max |x| so that raw-unit covariates
    // (income, age) do not wreck the conditioning of the Newton system.
    let mut scale = vec![1.0; p + 1];
    for j in 0..p {
        scale[j + 1] = x.column(j).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    }
    let mut design = Array2::<f64>::ones((n, p + 1));
    for j in 0..p {
        if scale[j + 1] > 0.0 {
            let s = scale[j + 1];
            design.column_mut(j + 1).zip_mut_with(&x.column(j), |d, &v| *d = v / s);
        } else {
            design.column_mut(j + 1).fill(0.0);
        }
    }
    let kept = independent_columns(&design.t().dot(&design), ALIAS_TOL);
    let aliased: Vec<usize> = (1..=p).filter(|c| !kept.contains(c)).map(|c| c - 1).collect();
    let d = design.select(ndarray::Axis(1), &kept);
    let ks: Vec<f64> = kept.iter().map(|&c| scale[c]).collect();
    let bound: Vec<f64> = ks.iter().map(|s| opts.bound * s).collect();
    let m = kept.len();

    let mut b = Array1::<f64>::zeros(m);
    if let Some(s) = start {
        for (q, &c) in kept.iter().enumerate() {
            b[q] = (s[c] * ks[q]).clamp(-bound[q], bound[q]);
        }
    }
    let yf: Array1<f64> = y.iter().map(|&v| f64::from(v)).collect();
    // Keeps exp(-|eta|) next to the likelihood so the fitted probabilities
    // come without a second pass of exponentials.
    let eval = |b: &Array1<f64>| {
        let eta = d.dot(b);
        let mut ll = 0.0;
        let e: Array1<f64> = eta
            .iter()
            .zip(y)
            .map(|(&z, &t)| {
                let e = (-z.abs()).exp();
                ll += f64::from(t) * z - (z.max(0.0) + e.ln_1p());
                e
            })
            .collect();
        (Fitted { eta, e }, ll)
    };

    let (mut fitted, mut ll) = eval(&b);
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let mu = fitted.mu();
        let g = d.t().dot(&(&yf - &mu));
        let free: Vec<usize> = (0..m)
            .filter(|&q| !((b[q] >= bound[q] && g[q] > 0.0) || (b[q] <= -bound[q] && g[q] < 0.0)))
            .collect();
        // Score in the caller's units is the scaled score times the column scale.
        let scaled_worst = free.iter().map(|&q| g[q].abs()).fold(0.0, f64::max);
        let worst = free.iter().map(|&q| g[q].abs() * ks[q].max(1.0)).fold(0.0, f64::max);
        if worst < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        iterations += 1;

        let w = mu.mapv(|u| u * (1.0 - u));
        let df = d.select(ndarray::Axis(1), &free);
        let wd = &df * &w.view().insert_axis(ndarray::Axis(1));
        let h = df.t().dot(&wd);
        let gf: Array1<f64> = free.iter().map(|&q| g[q]).collect();
        let delta = solve_damped(&h, &gf);

        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = b.clone();
            for (f, &q) in free.iter().enumerate() {
                cand[q] = (b[q] + t * delta[f]).clamp(-bound[q], bound[q]);
            }
            let (f2, l2) = eval(&cand);
            // A full Newton step near the optimum may lose an ulp of likelihood.
            let tie = t == 1.0 && l2 >= ll - 1e-13 * (1.0 + ll.abs());
            if l2 >= ll || tie {
                let moved = cand != b;
                b = cand;
                fitted = f2;
                ll = l2;
                accepted = moved;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Stalled at the rounding floor: for raw-unit columns (x ~ 1e5)
            // the caller-unit score cannot get below tol, so fall back to
            // the score on the max-scaled columns.
            converged = scaled_worst < opts.tol;
            break;
        }
    }

    let separation = (0..m).any(|q| b[q].abs() >= bound[q]);
    let mu = fitted.mu();
    let w = mu.mapv(|u| u * (1.0 - u));
    let wd = &d * &w.view().insert_axis(ndarray::Axis(1));
    let info = d.t().dot(&wd);
    let cov = cholesky(&info).map(|l| cholesky_inverse(&l));

    let mut coefficients = vec![0.0; p + 1];
    let mut std_errors = vec![f64::NAN; p + 1];
    for (q, &c) in kept.iter().enumerate() {
        coefficients[c] = b[q] / ks[q];
        if let Some(cov) = &cov {
            std_errors[c] = cov[[q, q]].sqrt() / ks[q];
        }
    }
    Ok(GlmFit {
        coefficients,
        std_errors,
        log_likelihood: ll,
        converged,
        separation,
        iterations,
        aliased,
    })
}

struct Fitted {
    eta: Array1<f64>,
    /// `exp(-|eta|)`
    e: Array1<f64>,
}

impl Fitted {
    fn mu(&self) -> Array1<f64> {
        Zip::from(&self.eta)
            .and(&self.e)
            .map_collect(|&z, &e| if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) })
    }
}

/// Newton direction; adds growing diagonal jitter when the information
/// matrix is numerically singular (near-separated data).
fn solve_damped(h: &Array2<f64>, g: &Array1<f64>) -> Array1<f64> {
    let scale = (0..h.nrows()).map(|i| h[[i, i]]).fold(0.0, f64::max).max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..40 {
        let mut a = h.clone();
        for i in 0..a.nrows() {
            a[[i, i]] += jitter;
        }
        if let Some(l) = cholesky(&a) {
            return cholesky_solve(&l, g);
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
    }
    // Gradient ascent direction as a last resort.
    g.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn empty(n: usize) -> Array2<f64> {
        Array2::zeros((n, 0))
    }

    #[test]
    fn intercept_only_is_logit_of_mean() {
        let y = [1, 0, 1, 0];
        let f = fit_logistic(empty(4).view(), &y, &FitOptions::default()).unwrap();
        assert!(f.coefficients[0].abs() < 1e-12);
        let y = [1, 0, 0, 0];
        let f = fit_logistic(empty(4).view(), &y, &FitOptions::default()).unwrap();
        assert!((f.coefficients[0] - (1.0f64 / 3.0).ln()).abs() < 1e-8);
        assert!(f.converged && !f.separation);
        assert!(f.std_errors[0] > 0.0);
    }

    #[test]
    fn separation_hits_the_bound() {
        let x = array![[0.0], [0.0], [1.0], [1.0]];
        let f = fit_logistic(x.view(), &[0, 0, 1, 1], &FitOptions::default()).unwrap();
        assert!(f.separation);
        assert!((f.coefficients[1] - COEFFICIENT_BOUND).abs() < 1e-9, "{:?}", f);
    }

    #[test]
    fn aliased_columns_are_reported() {
        let x = array![[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [3.0, 6.0, 0.0], [4.0, 8.0, 0.0], [5.0, 10.0, 0.0]];
        let f = fit_logistic(x.view(), &[0, 1, 0, 1, 1], &FitOptions::default()).unwrap();
        assert_eq!(f.aliased, vec![1, 2]);
        assert_eq!(f.coefficients[2], 0.0);
        assert!(f.converged);
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_logistic(empty(3).view(), &[1, 1, 1], &FitOptions::default()), Err(Error::SingleClass)));
        let x = array![[f64::NAN], [1.0]];
        assert!(matches!(fit_logistic(x.view(), &[0, 1], &FitOptions::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn raw_unit_covariate_converges() {
        // Income-like column in the tens of thousands next to a 0/1 column.
        let n = 200;
        let mut x = Array2::zeros((n, 2));
        let mut y = vec![0u8; n];
        for i in 0..n {
            x[[i, 0]] = 20_000.0 + 400.0 * i as f64;
            x[[i, 1]] = (i % 3 == 0) as u8 as f64;
            y[i] = ((i * 7919) % 11 < 4 + i / 60) as u8;
        }
        let f = fit_logistic(x.view(), &y, &FitOptions::default()).unwrap();
        assert!(f.converged, "{f:?}");
        let eta = f.predict_linear(x.view());
        for j in 0..2 {
            let scale = x.column(j).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let score: f64 = (0..n).map(|i| x[[i, j]] / scale * (f64::from(y[i]) - sigmoid(eta[i]))).sum();
            assert!(score.abs() < 1e-8, "score {j} = {score}");
        }
    }
}
