use ndarray::{Array2, Axis};

use super::Supervision;
use crate::cp::{frobenius_fit, mttkrp, other_modes, CPModel};
use crate::logit::{fit_logistic_from, sigmoid, softplus, FitOptions};
use crate::tensor::{SparseTensor3, PATIENT};
use crate::{Error, Result};

/// Linear predictors of the labeled patients, in label-map order.
pub(crate) fn linear_predictors(u: &Array2<f64>, sup: &Supervision, beta: &[f64]) -> Vec<f64> {
    let r = u.ncols();
    let (b_pheno, b_cov) = beta[1..].split_at(r);
    sup.labels
        .keys()
        .map(|&p| {
            let mut z = beta[0];
            for (x, b) in u.row(p).iter().zip(b_pheno) {
                z += x * b;
            }
            if let Some(c) = &sup.covariates {
                for (x, b) in c.row(p).iter().zip(b_cov) {
                    z += x * b;
                }
            }
            z
        })
        .collect()
}

/// Logistic negative log-likelihood of the labeled patients, with patient
/// memberships `u` and coefficients `beta`.
pub fn logistic_nll(u: &Array2<f64>, sup: &Supervision, beta: &[f64]) -> f64 {
    linear_predictors(u, sup, beta)
        .iter()
        .zip(sup.labels.values())
        .map(|(&z, &y)| softplus(z) - f64::from(y) * z)
        .sum()
}

fn check_supervision(m: &CPModel, sup: &Supervision) -> Result<()> {
    sup.validate(m.dims()[PATIENT], m.rank())
}

/// Frobenius fit plus `omega` times the logistic loss of the labeled patients.
pub fn combined_objective(m: &CPModel, t: &SparseTensor3, sup: Option<&Supervision>, omega: f64) -> Result<f64> {
    let f = frobenius_fit(m, t)?;
    match sup {
        Some(s) if omega != 0.0 => {
            check_supervision(m, s)?;
            Ok(f + omega * logistic_nll(&m.factors[PATIENT], s, &s.beta))
        }
        _ => Ok(f),
    }
}

/// `(lambda lambda^T) * Gram(other1) * Gram(other2)`, elementwise.
pub(crate) fn gamma(lambda: &[f64], grams: &[Array2<f64>; 3], mode: usize) -> Array2<f64> {
    let (o1, o2) = other_modes(mode);
    let r = lambda.len();
    Array2::from_shape_fn((r, r), |(p, q)| lambda[p] * lambda[q] * grams[o1][[p, q]] * grams[o2][[p, q]])
}

/// MTTKRP with component weights folded in.
pub(crate) fn weighted_mttkrp(t: &SparseTensor3, m: &CPModel, mode: usize) -> Result<Array2<f64>> {
    let mut k = mttkrp(t, m, mode)?;
    for (mut col, &l) in k.axis_iter_mut(Axis(1)).zip(m.lambda.iter()) {
        col *= l;
    }
    Ok(k)
}

fn frobenius_gradient(m: &CPModel, t: &SparseTensor3, mode: usize) -> Result<Array2<f64>> {
    let grams = [m.gram(0), m.gram(1), m.gram(2)];
    let g = gamma(m.lambda.as_slice().expect("contiguous"), &grams, mode);
    let k = weighted_mttkrp(t, m, mode)?;
    Ok((m.factors[mode].dot(&g) - k) * 2.0)
}

/// Adds `omega * (sigmoid(z_p) - y_p) * beta_pheno` to the labeled rows of `grad`.
pub(crate) fn add_supervised_gradient(grad: &mut Array2<f64>, u: &Array2<f64>, sup: &Supervision, beta: &[f64], omega: f64) {
    let r = u.ncols();
    let b_pheno = &beta[1..1 + r];
    let z = linear_predictors(u, sup, beta);
    for ((&p, &y), zp) in sup.labels.iter().zip(z) {
        let w = omega * (sigmoid(zp) - f64::from(y));
        for (g, b) in grad.row_mut(p).iter_mut().zip(b_pheno) {
            *g += w * b;
        }
    }
}

/// Gradient of [`combined_objective`] with respect to the patient factor.
pub fn patient_mode_gradient(m: &CPModel, t: &SparseTensor3, sup: Option<&Supervision>, omega: f64) -> Result<Array2<f64>> {
    let mut grad = frobenius_gradient(m, t, PATIENT)?;
    if let Some(s) = sup.filter(|_| omega != 0.0) {
        check_supervision(m, s)?;
        add_supervised_gradient(&mut grad, &m.factors[PATIENT], s, &s.beta, omega);
    }
    Ok(grad)
}

/// Gradient of the Frobenius fit with respect to the diagnosis (1) or medication (2) factor.
pub fn other_mode_gradient(m: &CPModel, t: &SparseTensor3, mode: usize) -> Result<Array2<f64>> {
    if mode != 1 && mode != 2 {
        return Err(Error::Config(format!("other_mode_gradient takes mode 1 or 2, got {mode}")));
    }
    frobenius_gradient(m, t, mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaRefit {
    pub beta: Vec<f64>,
    /// Logistic negative log-likelihood at `beta`.
    pub nll: f64,
    /// True when the new fit did not improve on the previous coefficients.
    pub kept_previous: bool,
    pub separation: bool,
}

/// Refits the logistic coefficients on the current patient memberships
/// (plus covariates), warm-started from `sup.beta`. The loss never
/// increases: if the fit is worse, the previous coefficients are kept.
pub fn refit_beta(m: &CPModel, sup: &Supervision) -> Result<BetaRefit> {
    check_supervision(m, sup)?;
    refit_beta_from(m, sup, &sup.beta)
}

pub(crate) fn refit_beta_from(m: &CPModel, sup: &Supervision, previous: &[f64]) -> Result<BetaRefit> {
    let u = &m.factors[PATIENT];
    let r = m.rank();
    let c = sup.n_covariates();
    let rows: Vec<usize> = sup.labels.keys().copied().collect();
    let y: Vec<u8> = sup.labels.values().copied().collect();
    let mut x = Array2::<f64>::zeros((rows.len(), r + c));
    for (q, &p) in rows.iter().enumerate() {
        x.row_mut(q).slice_mut(ndarray::s![..r]).assign(&u.row(p));
        if let Some(cov) = &sup.covariates {
            x.row_mut(q).slice_mut(ndarray::s![r..]).assign(&cov.row(p));
        }
    }
    let fit = fit_logistic_from(x.view(), &y, &FitOptions::default(), Some(previous))?;
    let old = logistic_nll(u, sup, previous);
    let new = logistic_nll(u, sup, &fit.coefficients);
    if !new.is_finite() {
        return Err(Error::NonFinite("logistic loss after coefficient refit".into()));
    }
    Ok(if new <= old {
        BetaRefit {
            beta: fit.coefficients,
            nll: new,
            kept_previous: false,
            separation: fit.separation,
        }
    } else {
        BetaRefit {
            beta: previous.to_vec(),
            nll: old,
            kept_previous: true,
            separation: fit.separation,
        }
    })
}
