//! Deterministic inputs shared by the benchmarks.

use ndarray::Array2;
use phenotensor::rng::{index_below, substream, unit_f64, Domain};
use phenotensor::tensor::Entry;
use phenotensor::SparseTensor3;

/// Sparse count tensor with roughly `nnz` distinct nonzeros, counts in 1..=8.
pub fn random_tensor(dims: [usize; 3], nnz: usize, seed: u64) -> SparseTensor3 {
    let mut rng = substream(seed, Domain::Simulation, 0);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..nnz {
        seen.insert(dims.map(|d| index_below(&mut rng, d)));
    }
    let entries = seen
        .into_iter()
        .map(|index| Entry {
            index,
            count: 1 + index_below(&mut rng, 8) as u32,
        })
        .collect();
    SparseTensor3::from_entries(dims, entries).expect("valid coordinates")
}

/// Design matrix and labels from a logistic model with unit coefficients.
pub fn logistic_data(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
    let mut rng = substream(seed, Domain::Simulation, 1);
    let x = Array2::from_shape_fn((n, p), |_| 2.0 * unit_f64(&mut rng) - 1.0);
    let y = x
        .rows()
        .into_iter()
        .map(|row| {
            let eta: f64 = row.sum() * 0.5;
            u8::from(unit_f64(&mut rng) < 1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    (x, y)
}

/// Scores correlated with binary labels.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = substream(seed, Domain::Simulation, 2);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(unit_f64(&mut rng) < 0.3)).collect();
    let scores = labels.iter().map(|&y| f64::from(y) + unit_f64(&mut rng)).collect();
    (scores, labels)
}
