//! Sparse patient x diagnosis x medication count tensors.

mod build;
mod io;

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use build::{count_cooccurrences, drop_empty_patients, tensor_stats, truncate_counts, DropReport, TensorStats};
pub use io::{read_tensor, write_tensor};

use crate::{Error, Result};

pub const PATIENT: usize = 0;
pub const DIAGNOSIS: usize = 1;
pub const MEDICATION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entry {
    pub index: [usize; 3],
    pub count: u32,
}

/// Coordinate-format count tensor. Entries are kept sorted by coordinate,
/// unique, and strictly positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseTensor3 {
    pub dims: [usize; 3],
    pub labels: [Vec<String>; 3],
    pub entries: Vec<Entry>,
}

impl SparseTensor3 {
    pub fn new(labels: [Vec<String>; 3], mut entries: Vec<Entry>) -> Result<Self> {
        let dims = [labels[0].len(), labels[1].len(), labels[2].len()];
        entries.sort_unstable();
        for w in entries.windows(2) {
            if w[0].index == w[1].index {
                return Err(Error::DimensionMismatch(format!("duplicate coordinate {:?}", w[0].index)));
            }
        }
        for e in &entries {
            if e.count == 0 {
                return Err(Error::DimensionMismatch(format!("zero count at {:?}", e.index)));
            }
            let [i, j, k] = e.index;
            if i >= dims[0] || j >= dims[1] || k >= dims[2] {
                return Err(Error::IndexOutOfRange { i, j, k, dims });
            }
        }
        Ok(SparseTensor3 { dims, labels, entries })
    }

    /// Tensor with generated labels (`i0`, `j0`, ...), for tests and synthetic data.
    pub fn from_entries(dims: [usize; 3], entries: Vec<Entry>) -> Result<Self> {
        let labels = [
            (0..dims[0]).map(|i| format!("i{i}")).collect(),
            (0..dims[1]).map(|j| format!("j{j}")).collect(),
            (0..dims[2]).map(|k| format!("k{k}")).collect(),
        ];
        Self::new(labels, entries)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|e| f64::from(e.count).powi(2)).sum()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| u64::from(e.count)).sum()
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.count *= factor;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correspondence {
    /// Every medication pairs with every diagnosis of the same encounter.
    Equal,
    /// Only pairs listed in an [`IndicationMap`] are counted.
    Indicated,
}

impl Correspondence {
    pub fn short_name(self) -> &'static str {
        match self {
            Correspondence::Equal => "all",
            Correspondence::Indicated => "ind",
        }
    }
}

impl FromStr for Correspondence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "equal" | "all" | "equal_correspondence" => Ok(Correspondence::Equal),
            "indicated" | "ind" | "indication" | "indication_filtered" => Ok(Correspondence::Indicated),
            other => Err(Error::Config(format!("unknown correspondence mode `{other}`"))),
        }
    }
}

/// Permitted (diagnosis code, generic medication name) pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicationMap {
    pub pairs: BTreeSet<(String, String)>,
}

impl IndicationMap {
    pub fn contains(&self, dx: &str, med: &str) -> bool {
        // BTreeSet<(String, String)> cannot be probed with borrowed halves.
        self.pairs.contains(&(dx.to_string(), med.to_string()))
    }

    pub fn insert(&mut self, dx: impl Into<String>, med: impl Into<String>) {
        self.pairs.insert((dx.into(), med.into()));
    }

    /// Reads a `diagnosis_code,medication` file, merged into `self`.
    pub fn extend_from_path(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                })
        };
        let (dx_col, med_col) = (col("diagnosis_code")?, col("medication")?);
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            match (rec.get(dx_col), rec.get(med_col)) {
                (Some(d), Some(m)) if !d.is_empty() && !m.is_empty() => self.insert(d, m),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: "empty diagnosis_code or medication".into(),
                    })
                }
            }
        }
        Ok(())
    }

    /// Primary indication file plus an optional file of additional pairs.
    pub fn from_paths(primary: &Path, extra: Option<&Path>) -> Result<Self> {
        let mut map = IndicationMap::default();
        map.extend_from_path(primary)?;
        if let Some(p) = extra {
            map.extend_from_path(p)?;
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates() {
        let e = |i, j, k, c| Entry { index: [i, j, k], count: c };
        assert!(SparseTensor3::from_entries([2, 2, 2], vec![e(0, 0, 0, 1), e(1, 1, 1, 2)]).is_ok());
        assert!(SparseTensor3::from_entries([2, 2, 2], vec![e(0, 0, 2, 1)]).is_err());
        assert!(SparseTensor3::from_entries([2, 2, 2], vec![e(0, 0, 0, 0)]).is_err());
        assert!(SparseTensor3::from_entries([2, 2, 2], vec![e(0, 0, 0, 1), e(0, 0, 0, 3)]).is_err());
        let t = SparseTensor3::from_entries([2, 2, 2], vec![e(1, 1, 1, 2), e(0, 0, 0, 1)]).unwrap();
        assert_eq!(t.entries[0].index, [0, 0, 0]);
        assert_eq!(t.norm_sq(), 5.0);
    }

    #[test]
    fn indication_file_with_extra_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "diagnosis_code,medication\n250.00,metformin\n401.9,lisinopril\n").unwrap();
        std::fs::write(&b, "diagnosis_code,medication\n250.00,metformin\n272.0,atorvastatin\n").unwrap();
        let m = IndicationMap::from_paths(&a, Some(&b)).unwrap();
        assert_eq!(m.pairs.len(), 3);
        assert!(m.contains("272.0", "atorvastatin"));
        assert!(!m.contains("272.0", "metformin"));
    }

    #[test]
    fn correspondence_parses() {
        assert_eq!("ind".parse::<Correspondence>().unwrap(), Correspondence::Indicated);
        assert_eq!("Equal".parse::<Correspondence>().unwrap(), Correspondence::Equal);
        assert!("both".parse::<Correspondence>().is_err());
    }
}
