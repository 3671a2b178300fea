use ndarray::{Array1, Array2, Zip};

use super::objective::{add_supervised_gradient, gamma, logistic_nll, refit_beta_from, weighted_mttkrp};
use super::{FitTrace, SolverConfig, StopReason, Supervision, TraceRow};
use crate::cp::{frobenius_fit, normalize_columns, permute_components, CPModel};
use crate::rng::{substream, Domain};
use crate::tensor::{SparseTensor3, PATIENT};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizeOutput {
    /// Max-normalized, importance-sorted model.
    pub model: CPModel,
    pub trace: FitTrace,
    /// Final logistic coefficients, aligned with the sorted components.
    /// Present only when the supervised term was active.
    pub beta: Option<Vec<f64>>,
}

/// Uniform (0, 1) factor entries from the seeded init stream, unit weights,
/// then column normalization.
pub fn init_factors(dims: [usize; 3], rank: usize, seed: u64) -> Result<CPModel> {
    use rand::RngCore;
    if rank == 0 {
        return Err(Error::Config("rank must be at least 1".into()));
    }
    let mut rng = substream(seed, Domain::Init, 0);
    let factors = dims.map(|n| {
        // Midpoint of a 2^-53 grid cell, so 0 is never drawn.
        Array2::from_shape_simple_fn((n, rank), || ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64))
    });
    Ok(normalize_columns(&CPModel::new(Array1::ones(rank), factors)?))
}

pub fn factorize(t: &SparseTensor3, cfg: &SolverConfig, sup: Option<&Supervision>) -> Result<FactorizeOutput> {
    factorize_from(t, cfg, sup, None)
}

/// Mutable solver state. `beta` is `Some` only when the supervised term is on.
struct State<'a> {
    t: &'a SparseTensor3,
    /// `||X||^2`, fixed for the whole run.
    t_norm: f64,
    m: CPModel,
    beta: Option<Vec<f64>>,
    sup: Option<&'a Supervision>,
    omega: f64,
}

impl State<'_> {
    fn logistic(&self, m: &CPModel, beta: Option<&Vec<f64>>) -> f64 {
        match (self.sup, beta) {
            (Some(s), Some(b)) => logistic_nll(&m.factors[PATIENT], s, b),
            _ => 0.0,
        }
    }

    /// (combined, frobenius, logistic) at a candidate point.
    fn objective(&self, m: &CPModel, beta: Option<&Vec<f64>>) -> Result<Parts> {
        let f = frobenius_fit(m, self.t)?;
        Ok(self.combine(f, self.logistic(m, beta)))
    }

    /// Frobenius fit of a candidate that differs from the current model only
    /// in factor `mode` (and possibly in components zeroed everywhere).
    /// `k` is the weighted MTTKRP for `mode`, which depends on the other
    /// factors alone, so `<X, M>` reduces to `sum(U_mode * k)`.
    fn block_frobenius(&self, cand: &CPModel, mode: usize, k: &Array2<f64>) -> f64 {
        let inner: f64 = cand.factors[mode].iter().zip(k.iter()).map(|(u, k)| u * k).sum();
        self.t_norm - 2.0 * inner + cand.norm_sq()
    }

    fn combine(&self, frobenius: f64, logistic: f64) -> Parts {
        Parts {
            combined: frobenius + self.omega * logistic,
            frobenius,
            logistic,
        }
    }

    fn dead(&self) -> Vec<bool> {
        self.m.lambda.iter().map(|&l| l == 0.0).collect()
    }

    fn row(&self, iter: usize, parts: Parts, steps: [f64; 3], beta_loglik: Option<f64>) -> TraceRow {
        let min_entry = self.m.factors.iter().flat_map(|f| f.iter()).fold(f64::INFINITY, |a, &b| a.min(b));
        TraceRow {
            iter,
            objective: parts.combined,
            frobenius: parts.frobenius,
            logistic: parts.logistic,
            steps,
            beta_loglik,
            min_entry,
        }
    }

    /// One projected-gradient step on `mode` with backtracking. Returns the
    /// accepted step size (0 if every trial increased the objective) and the
    /// objective at the resulting point.
    fn block_step(&mut self, mode: usize, cfg: &SolverConfig, current: Parts) -> Result<(f64, Parts)> {
        let lambda = self.m.lambda.to_vec();
        let grams = [self.m.gram(0), self.m.gram(1), self.m.gram(2)];
        let g = gamma(&lambda, &grams, mode);
        let k = weighted_mttkrp(self.t, &self.m, mode)?;
        let mut grad = (self.m.factors[mode].dot(&g) - &k) * 2.0;
        let mut lipschitz = 2.0 * g.rows().into_iter().map(|r| r.sum()).fold(0.0, f64::max);
        if mode == PATIENT {
            if let (Some(s), Some(b)) = (self.sup, &self.beta) {
                add_supervised_gradient(&mut grad, &self.m.factors[PATIENT], s, b, self.omega);
                let r = self.m.rank();
                lipschitz += 0.25 * self.omega * b[1..1 + r].iter().map(|v| v * v).sum::<f64>();
            }
        }
        // Dead components stay frozen.
        for (r, dead) in self.dead().into_iter().enumerate() {
            if dead {
                grad.column_mut(r).fill(0.0);
            }
        }
        if !(lipschitz > 0.0) || !lipschitz.is_finite() {
            return Ok((0.0, current));
        }
        let mut eta = cfg.backtrack_initial / lipschitz;
        for _ in 0..=cfg.backtrack_max {
            let (cand, cand_beta, killed) = self.candidate(mode, &grad, eta);
            // Outside the patient mode the logistic term only moves when a
            // component dies.
            let f = self.block_frobenius(&cand, mode, &k);
            let l = if mode == PATIENT || killed {
                self.logistic(&cand, cand_beta.as_ref())
            } else {
                current.logistic
            };
            let obj = self.combine(f, l);
            if obj.combined <= current.combined {
                self.m = cand;
                self.beta = cand_beta;
                return Ok((eta, obj));
            }
            eta *= cfg.backtrack_shrink;
        }
        Ok((0.0, current))
    }

    /// `max(0, U - eta * grad)` for one mode; a component whose column
    /// vanishes is zeroed in every mode with weight 0. The flag reports
    /// whether that happened.
    fn candidate(&self, mode: usize, grad: &Array2<f64>, eta: f64) -> (CPModel, Option<Vec<f64>>, bool) {
        let mut cand = self.m.clone();
        Zip::from(&mut cand.factors[mode])
            .and(&self.m.factors[mode])
            .and(grad)
            .for_each(|c, &u, &g| *c = (u - eta * g).max(0.0));
        let mut beta = self.beta.clone();
        let mut killed = false;
        for r in 0..cand.rank() {
            if cand.lambda[r] != 0.0 && cand.factors[mode].column(r).iter().all(|&v| v == 0.0) {
                kill(&mut cand, beta.as_mut(), r);
                killed = true;
            }
        }
        (cand, beta, killed)
    }

    /// Rescales every live column by a power of two so its maximum lies in
    /// [1, 2). Exact in floating point, so the objective (every term of it)
    /// is unchanged bit for bit.
    fn rebalance(&mut self) {
        for r in 0..self.m.rank() {
            if self.m.lambda[r] == 0.0 {
                continue;
            }
            for mode in 0..3 {
                let max = self.m.factors[mode].column(r).iter().fold(0.0_f64, |a, &b| a.max(b));
                if max <= 0.0 {
                    continue;
                }
                let s = 2f64.powi(max.log2().floor() as i32);
                if s == 1.0 {
                    continue;
                }
                self.m.factors[mode].column_mut(r).mapv_inplace(|v| v / s);
                self.m.lambda[r] *= s;
                if mode == PATIENT {
                    if let Some(b) = self.beta.as_mut() {
                        b[1 + r] *= s;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Parts {
    combined: f64,
    frobenius: f64,
    logistic: f64,
}

fn kill(m: &mut CPModel, beta: Option<&mut Vec<f64>>, r: usize) {
    m.lambda[r] = 0.0;
    for f in m.factors.iter_mut() {
        f.column_mut(r).fill(0.0);
    }
    if let Some(b) = beta {
        b[1 + r] = 0.0;
    }
}

/// Block projected-gradient factorization, optionally starting from `init`
/// instead of a seeded random model.
pub fn factorize_from(
    t: &SparseTensor3,
    cfg: &SolverConfig,
    sup: Option<&Supervision>,
    init: Option<&CPModel>,
) -> Result<FactorizeOutput> {
    cfg.validate()?;
    if t.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let start = match init {
        Some(m) => {
            if m.dims() != t.dims || m.rank() != cfg.rank {
                return Err(Error::DimensionMismatch(format!(
                    "initial model dims {:?} rank {}, expected {:?} rank {}",
                    m.dims(),
                    m.rank(),
                    t.dims,
                    cfg.rank
                )));
            }
            normalize_columns(m)
        }
        None => init_factors(t.dims, cfg.rank, cfg.seed)?,
    };
    let supervised = sup.filter(|_| cfg.omega > 0.0);
    if let Some(s) = supervised {
        s.validate(t.dims[PATIENT], cfg.rank)?;
    }
    let mut st = State {
        t,
        t_norm: t.norm_sq(),
        m: start,
        beta: supervised.map(|s| s.beta.clone()),
        sup: supervised,
        omega: cfg.omega,
    };
    for r in 0..st.m.rank() {
        if st.m.lambda[r] == 0.0 {
            kill(&mut st.m, st.beta.as_mut(), r);
        }
    }
    let mut trace = FitTrace {
        rank: cfg.rank,
        omega: cfg.omega,
        rel_tol: cfg.rel_tol,
        max_outer_iters: cfg.max_outer_iters,
        seed: cfg.seed,
        rows: Vec::new(),
        stop: StopReason::NotRun,
    };
    if cfg.max_outer_iters == 0 {
        let parts = st.objective(&st.m, st.beta.as_ref())?;
        trace.rows.push(st.row(0, parts, [0.0; 3], None));
        return Ok(finish(st, trace));
    }

    // Match the overall scale of the data before the first step, so counts
    // multiplied by c give weights multiplied by c and identical factors.
    let inner = st.m.inner(t)?;
    let norm = st.m.norm_sq();
    if inner > 0.0 && norm > 0.0 {
        let alpha = inner / norm;
        st.m.lambda.mapv_inplace(|l| l * alpha);
    }
    st.rebalance();
    let mut current = st.objective(&st.m, st.beta.as_ref())?;
    trace.rows.push(st.row(0, current, [0.0; 3], None));
    let mut previous = current.combined;
    trace.stop = StopReason::MaxIterations;

    for iter in 1..=cfg.max_outer_iters {
        let mut beta_loglik = None;
        if let (Some(s), Some(b)) = (st.sup, &st.beta) {
            let refit = refit_beta_from(&st.m, s, b).map_err(|e| e.at_stage("coefficient refit"))?;
            beta_loglik = Some(-refit.nll);
            // The refit loss is the objective's own logistic term at the new beta.
            current = st.combine(current.frobenius, refit.nll);
            st.beta = Some(refit.beta);
        }
        let mut steps = [0.0; 3];
        for (mode, step) in steps.iter_mut().enumerate() {
            let (eta, obj) = st.block_step(mode, cfg, current)?;
            *step = eta;
            current = obj;
        }
        st.rebalance();
        let row = st.row(iter, current, steps, beta_loglik);
        let objective = row.objective;
        trace.rows.push(row);
        if !objective.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                trace: Box::new(trace),
            });
        }
        let rel = (previous - objective).abs() / previous.abs().max(f64::MIN_POSITIVE);
        previous = objective;
        if rel < cfg.rel_tol {
            trace.stop = StopReason::Converged;
            break;
        }
    }
    Ok(finish(st, trace))
}

/// Max-normalizes and sorts the model, carrying the coefficients along.
fn finish(st: State, trace: FitTrace) -> FactorizeOutput {
    let mut beta = st.beta;
    if let Some(b) = beta.as_mut() {
        for r in 0..st.m.rank() {
            let max = st.m.factors[PATIENT].column(r).iter().fold(0.0_f64, |a, &v| a.max(v));
            if st.m.lambda[r] > 0.0 && max > 0.0 {
                b[1 + r] *= max;
            } else {
                b[1 + r] = 0.0;
            }
        }
    }
    let normalized = normalize_columns(&st.m);
    let mut order: Vec<usize> = (0..normalized.rank()).collect();
    order.sort_by(|&a, &b| normalized.lambda[b].total_cmp(&normalized.lambda[a]));
    let model = permute_components(&normalized, &order);
    if let Some(b) = beta.as_mut() {
        let pheno: Vec<f64> = order.iter().map(|&r| b[1 + r]).collect();
        b[1..1 + pheno.len()].copy_from_slice(&pheno);
    }
    FactorizeOutput { model, trace, beta }
}
