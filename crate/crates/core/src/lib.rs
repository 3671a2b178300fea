//! Supervised non-negative CP factorization of patient x diagnosis x medication
//! co-occurrence tensors, with the cohort preparation, logistic evaluation and
//! experiment pipeline around it.

pub mod cohort;
pub mod cp;
pub mod error;
mod kv;
mod linalg;
pub mod logit;
pub mod pipeline;
pub mod rng;
pub mod solver;
pub mod tensor;

pub use cohort::{CohortTable, CovariateVector, EncounterRecord, PatientDemographics};
pub use cp::{CPModel, Phenotype};
pub use error::{Error, ErrorClass, Result};
pub use logit::{CvReport, GlmFit, StepwiseResult};
pub use solver::{FitTrace, SolverConfig, Supervision};
pub use tensor::{Correspondence, Entry, IndicationMap, SparseTensor3};

/// Median of an already sorted, nonempty slice.
pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// 0-based index of the nearest-rank `q` quantile among `n > 0` sorted
/// values: 1-based position `ceil(q * n)`, clamped to `1..=n`.
pub(crate) fn nearest_rank_index(n: usize, q: f64) -> usize {
    // q * n can land a hair above an integer (0.07 * 100 = 7.000000000000001).
    let pos = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    pos - 1
}
