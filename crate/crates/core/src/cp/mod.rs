//! CP model of a three-way tensor and the exact kernels used by the solver.

mod export;

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use export::{export_phenotypes, phenotype_report_text, LengthReport, Phenotype, PhenotypeExport, DEFAULT_DISPLAY_THRESHOLD};

use crate::tensor::SparseTensor3;
use crate::{Error, Result};

/// Column normalization scheme used for memberships; written into report headers.
pub const NORMALIZATION: &str = "max (l-infinity) column normalization";

/// `lambda[r]` times the outer product of column `r` of each factor, summed over `r`.
///
/// Factors are stored row-major (`n_mode x rank`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CPModel {
    pub lambda: Array1<f64>,
    pub factors: [Array2<f64>; 3],
}

impl CPModel {
    pub fn new(lambda: Array1<f64>, factors: [Array2<f64>; 3]) -> Result<Self> {
        let r = lambda.len();
        if r == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        for (mode, f) in factors.iter().enumerate() {
            if f.ncols() != r {
                return Err(Error::DimensionMismatch(format!(
                    "factor {mode} has {} columns, rank is {r}",
                    f.ncols()
                )));
            }
        }
        Ok(CPModel {
            lambda,
            factors: factors.map(|f| f.as_standard_layout().into_owned()),
        })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.factors[0].nrows(), self.factors[1].nrows(), self.factors[2].nrows()]
    }

    pub fn reconstruct_entry(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        let dims = self.dims();
        if i >= dims[0] || j >= dims[1] || k >= dims[2] {
            return Err(Error::IndexOutOfRange { i, j, k, dims });
        }
        let [a, b, c] = &self.factors;
        Ok((0..self.rank())
            .map(|r| self.lambda[r] * a[[i, r]] * b[[j, r]] * c[[k, r]])
            .sum())
    }

    /// `U^T U` for one mode.
    pub fn gram(&self, mode: usize) -> Array2<f64> {
        let u = &self.factors[mode];
        u.t().dot(u)
    }

    /// `||M||^2` from the Gram matrices, without forming `M`.
    pub fn norm_sq(&self) -> f64 {
        let grams = [self.gram(0), self.gram(1), self.gram(2)];
        norm_sq_from_grams(&self.lambda, &grams)
    }

    /// `<X, M>`, summed over the nonzeros of `X`.
    pub fn inner(&self, t: &SparseTensor3) -> Result<f64> {
        check_dims(self, t)?;
        let r = self.rank();
        let [a, b, c] = self.slices();
        let lambda = self.lambda.as_slice().expect("contiguous lambda");
        let mut total = 0.0;
        for e in &t.entries {
            let [i, j, k] = e.index;
            let (ai, bj, ck) = (&a[i * r..][..r], &b[j * r..][..r], &c[k * r..][..r]);
            let mut m = 0.0;
            for (((l, x), y), z) in lambda.iter().zip(ai).zip(bj).zip(ck) {
                m += l * x * y * z;
            }
            total += f64::from(e.count) * m;
        }
        Ok(total)
    }

    /// Component `r` is dead when its weight is zero or any of its columns is all zero.
    pub fn dead_components(&self) -> Vec<bool> {
        (0..self.rank())
            .map(|r| self.lambda[r] == 0.0 || self.factors.iter().any(|f| f.column(r).iter().all(|&v| v == 0.0)))
            .collect()
    }

    pub(crate) fn slices(&self) -> [&[f64]; 3] {
        let [a, b, c] = &self.factors;
        let msg = "factors are kept in standard layout";
        [a.as_slice().expect(msg), b.as_slice().expect(msg), c.as_slice().expect(msg)]
    }

    pub fn save_json(&self, path: &Path, labels: Option<&[Vec<String>; 3]>) -> Result<()> {
        let file = ModelFile::from_model(self, labels);
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<(Self, Option<[Vec<String>; 3]>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        file.into_model()
    }
}

/// On-disk model representation: plain nested arrays plus optional labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub rank: usize,
    pub normalization: String,
    pub lambda: Vec<f64>,
    pub patient: Vec<Vec<f64>>,
    pub diagnosis: Vec<Vec<f64>>,
    pub medication: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<ModelLabels>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelLabels {
    pub patient: Vec<String>,
    pub diagnosis: Vec<String>,
    pub medication: Vec<String>,
}

impl ModelFile {
    pub fn from_model(m: &CPModel, labels: Option<&[Vec<String>; 3]>) -> Self {
        let rows = |u: &Array2<f64>| u.rows().into_iter().map(|r| r.to_vec()).collect();
        ModelFile {
            rank: m.rank(),
            normalization: NORMALIZATION.to_string(),
            lambda: m.lambda.to_vec(),
            patient: rows(&m.factors[0]),
            diagnosis: rows(&m.factors[1]),
            medication: rows(&m.factors[2]),
            labels: labels.map(|[p, d, k]| ModelLabels {
                patient: p.clone(),
                diagnosis: d.clone(),
                medication: k.clone(),
            }),
        }
    }

    pub fn into_model(self) -> Result<(CPModel, Option<[Vec<String>; 3]>)> {
        let r = self.rank;
        if self.lambda.len() != r {
            return Err(Error::DimensionMismatch(format!("rank {r} but {} weights", self.lambda.len())));
        }
        let to_array = |rows: Vec<Vec<f64>>, name: &str| -> Result<Array2<f64>> {
            let n = rows.len();
            let mut flat = Vec::with_capacity(n * r);
            for row in rows {
                if row.len() != r {
                    return Err(Error::DimensionMismatch(format!("{name} row has {} values, rank is {r}", row.len())));
                }
                flat.extend(row);
            }
            Ok(Array2::from_shape_vec((n, r), flat).expect("shape checked"))
        };
        let factors = [
            to_array(self.patient, "patient")?,
            to_array(self.diagnosis, "diagnosis")?,
            to_array(self.medication, "medication")?,
        ];
        let model = CPModel::new(Array1::from(self.lambda), factors)?;
        let labels = self.labels.map(|l| [l.patient, l.diagnosis, l.medication]);
        if let Some(l) = &labels {
            let dims = model.dims();
            if (0..3).any(|m| l[m].len() != dims[m]) {
                return Err(Error::DimensionMismatch("label tables do not match factor sizes".into()));
            }
        }
        Ok((model, labels))
    }
}

fn check_dims(m: &CPModel, t: &SparseTensor3) -> Result<()> {
    if m.dims() != t.dims {
        return Err(Error::DimensionMismatch(format!("model dims {:?}, tensor dims {:?}", m.dims(), t.dims)));
    }
    Ok(())
}

pub(crate) fn norm_sq_from_grams(lambda: &Array1<f64>, grams: &[Array2<f64>; 3]) -> f64 {
    let r = lambda.len();
    let mut total = 0.0;
    for p in 0..r {
        for q in 0..r {
            total += lambda[p] * lambda[q] * grams[0][[p, q]] * grams[1][[p, q]] * grams[2][[p, q]];
        }
    }
    total
}

/// `||X - M||^2` over every cell of the tensor, zeros included.
pub fn frobenius_fit(m: &CPModel, t: &SparseTensor3) -> Result<f64> {
    let inner = m.inner(t)?;
    Ok(t.norm_sq() - 2.0 * inner + m.norm_sq())
}

/// Matricized tensor times the Khatri-Rao product of the two other factors
/// (weights not included). Rows follow `mode`, columns are components.
pub fn mttkrp(t: &SparseTensor3, m: &CPModel, mode: usize) -> Result<Array2<f64>> {
    if mode > 2 {
        return Err(Error::Config(format!("mode must be 0, 1 or 2, got {mode}")));
    }
    check_dims(m, t)?;
    let r = m.rank();
    let (o1, o2) = other_modes(mode);
    let s = m.slices();
    let (u1, u2) = (s[o1], s[o2]);
    let mut out = vec![0.0; m.dims()[mode] * r];
    for e in &t.entries {
        let x = f64::from(e.count);
        let (a, b) = (&u1[e.index[o1] * r..][..r], &u2[e.index[o2] * r..][..r]);
        let row = &mut out[e.index[mode] * r..][..r];
        for ((o, p), q) in row.iter_mut().zip(a).zip(b) {
            *o += x * p * q;
        }
    }
    Ok(Array2::from_shape_vec((m.dims()[mode], r), out).expect("shape"))
}

pub(crate) fn other_modes(mode: usize) -> (usize, usize) {
    match mode {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Divides every nonzero column by its maximum and moves the scale into the
/// weights. A component with an all-zero column gets weight 0.
pub fn normalize_columns(m: &CPModel) -> CPModel {
    let mut out = m.clone();
    for r in 0..m.rank() {
        let mut scale = 1.0;
        let mut dead = false;
        for f in out.factors.iter_mut() {
            let max = f.column(r).iter().fold(0.0_f64, |acc, &v| acc.max(v));
            if max > 0.0 {
                f.column_mut(r).mapv_inplace(|v| v / max);
                scale *= max;
            } else {
                dead = true;
            }
        }
        out.lambda[r] = if dead { 0.0 } else { out.lambda[r] * scale };
    }
    out
}

/// Stable reorder of components by descending weight.
pub fn sort_by_importance(m: &CPModel) -> CPModel {
    let mut order: Vec<usize> = (0..m.rank()).collect();
    order.sort_by(|&a, &b| m.lambda[b].total_cmp(&m.lambda[a]));
    permute_components(m, &order)
}

/// Component `q` of the result is component `order[q]` of `m`.
pub fn permute_components(m: &CPModel, order: &[usize]) -> CPModel {
    let lambda = order.iter().map(|&r| m.lambda[r]).collect();
    // `select` along columns may return a column-major array.
    let factors = m.factors.each_ref().map(|f| f.select(ndarray::Axis(1), order).as_standard_layout().into_owned());
    CPModel { lambda, factors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Entry;
    use ndarray::array;

    fn model(lambda: Vec<f64>, a: Array2<f64>, b: Array2<f64>, c: Array2<f64>) -> CPModel {
        CPModel::new(Array1::from(lambda), [a, b, c]).unwrap()
    }

    #[test]
    fn reconstruct_examples() {
        let m = model(vec![2.0], array![[1.0]], array![[0.5]], array![[0.25]]);
        assert_eq!(m.reconstruct_entry(0, 0, 0).unwrap(), 0.25);
        let m = model(vec![1.0, 1.0], array![[1.0, 0.5]], array![[1.0, 0.5]], array![[1.0, 0.5]]);
        assert_eq!(m.reconstruct_entry(0, 0, 0).unwrap(), 1.125);
        assert!(m.reconstruct_entry(0, 1, 0).is_err());
        let z = model(vec![1.0, 3.0], array![[0.0, 0.0]], array![[1.0, 1.0]], array![[1.0, 1.0]]);
        assert_eq!(z.reconstruct_entry(0, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn fit_of_empty_model_is_norm() {
        let t = SparseTensor3::from_entries(
            [2, 2, 1],
            vec![Entry { index: [0, 0, 0], count: 3 }, Entry { index: [1, 1, 0], count: 2 }],
        )
        .unwrap();
        let m = model(vec![0.0], array![[1.0], [1.0]], array![[1.0], [1.0]], array![[1.0]]);
        assert_eq!(frobenius_fit(&m, &t).unwrap(), 13.0);
        let exact = model(vec![3.0, 2.0], array![[1.0, 0.0], [0.0, 1.0]], array![[1.0, 0.0], [0.0, 1.0]], array![[1.0, 1.0]]);
        assert!(frobenius_fit(&exact, &t).unwrap().abs() < 1e-9);
        let wrong = model(vec![1.0], array![[1.0]], array![[1.0]], array![[1.0]]);
        assert!(matches!(frobenius_fit(&wrong, &t), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn mttkrp_single_entry_and_empty() {
        let t = SparseTensor3::from_entries([1, 1, 1], vec![Entry { index: [0, 0, 0], count: 3 }]).unwrap();
        let m = model(vec![1.0], array![[1.0]], array![[1.0]], array![[1.0]]);
        assert_eq!(mttkrp(&t, &m, 0).unwrap()[[0, 0]], 3.0);
        let empty = SparseTensor3::from_entries([1, 1, 1], vec![]).unwrap();
        assert_eq!(mttkrp(&empty, &m, 2).unwrap(), array![[0.0]]);
    }

    #[test]
    fn normalize_examples() {
        let m = model(vec![1.0], array![[1.0]], array![[2.0], [4.0]], array![[1.0]]);
        let n = normalize_columns(&m);
        assert_eq!(n.factors[1], array![[0.5], [1.0]]);
        assert_eq!(n.lambda[0], 4.0);
        assert_eq!(normalize_columns(&n), n);

        let d = model(vec![5.0, 1.0], array![[0.0, 1.0]], array![[0.0, 1.0]], array![[0.0, 1.0]]);
        let nd = normalize_columns(&d);
        assert_eq!(nd.lambda[0], 0.0);
        assert_eq!(nd.dead_components(), vec![true, false]);
    }

    #[test]
    fn sort_examples() {
        let f = || array![[1.0, 2.0, 3.0]];
        let m = model(vec![1.0, 3.0, 2.0], f(), f(), f());
        let s = sort_by_importance(&m);
        assert_eq!(s.lambda.to_vec(), vec![3.0, 2.0, 1.0]);
        assert_eq!(s.factors[0], array![[2.0, 3.0, 1.0]]);

        let eq = model(vec![1.0, 1.0, 1.0], f(), f(), f());
        assert_eq!(sort_by_importance(&eq), eq);

        let dead = model(vec![0.0, 0.5, 2.0], f(), f(), f());
        assert_eq!(sort_by_importance(&dead).lambda.to_vec(), vec![2.0, 0.5, 0.0]);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model(vec![2.0, 1.0], array![[1.0, 0.25]], array![[0.5, 1.0], [1.0, 0.0]], array![[1.0, 1.0]]);
        let labels = [vec!["p".to_string()], vec!["a".into(), "b".into()], vec!["x".into()]];
        m.save_json(&path, Some(&labels)).unwrap();
        let (back, l) = CPModel::load_json(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(l.unwrap(), labels);
    }
}
