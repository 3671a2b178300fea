use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_labels, stepwise_select, StepwiseConfig};
use crate::rng::{index_below, shuffle, substream, Domain};
use crate::{Error, Result};

/// Mann-Whitney AUC: (concordant + ties / 2) / (n_pos * n_neg), via midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    check_labels(labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auc scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives keeps midranks integral.
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share midrank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&o| labels[o] == 1).count() as u64;
        rank_sum_x2 += twice_mid * pos_in_group;
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    let u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
    Ok(u_x2 as f64 / 2.0 / (n_pos * n_neg) as f64)
}

/// Fold index per patient. Positives and negatives are shuffled separately
/// and dealt round-robin (positives first), so fold sizes and per-fold
/// positive counts each differ by at most one.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64, rep: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Config(format!("{} patients for {k} folds", labels.len())));
    }
    let mut rng = substream(seed, Domain::Folds, rep as u64);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    shuffle(&mut rng, &mut pos);
    shuffle(&mut rng, &mut neg);
    let mut fold = vec![0; labels.len()];
    for (t, &i) in pos.iter().chain(&neg).enumerate() {
        fold[i] = t % k;
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub stepwise: StepwiseConfig,
    pub n_boot: usize,
    pub level: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            repeats: 5,
            seed: 0,
            stepwise: StepwiseConfig::default(),
            n_boot: 1000,
            level: 0.95,
        }
    }
}

/// One train/test partition handed to the feature builder.
#[derive(Debug, Clone)]
pub struct Split<'a> {
    pub rep: usize,
    pub fold: usize,
    pub train: &'a [usize],
    pub test: &'a [usize],
}

/// Candidate feature matrices for one split; rows follow `Split::train` and
/// `Split::test` order.
#[derive(Debug, Clone)]
pub struct FoldDesign {
    pub train: Array2<f64>,
    pub test: Array2<f64>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Repetition-major: index `rep * folds + fold`.
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    /// Fold index per patient, one vector per repetition.
    pub assignments: Vec<Vec<usize>>,
    /// Names of the stepwise-selected terms, per fold.
    pub selected_terms: Vec<Vec<String>>,
}

/// Repeated stratified k-fold cross-validation of stepwise logistic models.
pub fn repeated_cv<F>(labels: &[u8], cfg: &CvConfig, mut builder: F) -> Result<CvReport>
where
    F: FnMut(&Split) -> Result<FoldDesign>,
{
    check_labels(labels)?;
    let mut fold_aucs = Vec::with_capacity(cfg.folds * cfg.repeats);
    let mut assignments = Vec::with_capacity(cfg.repeats);
    let mut selected_terms = Vec::new();
    for rep in 0..cfg.repeats {
        let assign = stratified_folds(labels, cfg.folds, cfg.seed, rep)?;
        for fold in 0..cfg.folds {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assign[i] == fold);
            let y_test: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
            let y_train: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            if check_labels(&y_test).is_err() || check_labels(&y_train).is_err() {
                return Err(Error::DegenerateFold { rep, fold });
            }
            let split = Split {
                rep,
                fold,
                train: &train,
                test: &test,
            };
            let design = builder(&split)?;
            if design.train.nrows() != train.len() || design.test.nrows() != test.len() {
                return Err(Error::DimensionMismatch("fold design rows do not match the split".into()));
            }
            let sel = stepwise_select(design.train.view(), &y_train, &cfg.stepwise)?;
            let scores = sel.predict_linear(design.test.view());
            fold_aucs.push(auc(&scores, &y_test)?);
            selected_terms.push(sel.selected.iter().map(|&j| design.names.get(j).cloned().unwrap_or_else(|| format!("x{j}"))).collect());
        }
        assignments.push(assign);
    }
    let mean_auc = fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64;
    let (ci_lower, ci_upper) = bootstrap_ci(&fold_aucs, cfg.n_boot, cfg.level, cfg.seed)?;
    Ok(CvReport {
        folds: cfg.folds,
        repeats: cfg.repeats,
        seed: cfg.seed,
        fold_aucs,
        mean_auc,
        ci_lower,
        ci_upper,
        level: cfg.level,
        assignments,
        selected_terms,
    })
}

/// Percentile bootstrap interval for the mean of `values`.
///
/// Replicate `b` draws `values.len()` indices with `index_below` from
/// substream `b` of the bootstrap domain; quantiles are nearest-rank.
pub fn bootstrap_ci(values: &[f64], n_boot: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("bootstrap values"));
    }
    if n_boot == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("bootstrap needs n_boot > 0 and level in (0, 1), got {n_boot}, {level}")));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..n_boot)
        .map(|b| {
            let mut rng = substream(seed, Domain::Bootstrap, b as u64);
            // Running mean: exact when every draw is the same value.
            let mut mean = 0.0;
            for t in 0..n {
                mean += (values[index_below(&mut rng, n)] - mean) / (t + 1) as f64;
            }
            mean
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((
        means[crate::nearest_rank_index(n_boot, alpha)],
        means[crate::nearest_rank_index(n_boot, 1.0 - alpha)],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3, 0.3, 0.3], &[1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.2, 0.4, 0.6, 0.8], &[0, 1, 0, 1]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(pairs in proptest::collection::vec((0u8..6, 0u8..2), 2..40)) {
            let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) * 0.25).collect();
            let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(auc(&scores, &labels).unwrap(), brute(&scores, &labels));
            let mono: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 - 1.0).collect();
            prop_assert_eq!(auc(&mono, &labels).unwrap(), auc(&scores, &labels).unwrap());
        }

        #[test]
        fn folds_are_balanced(labels in proptest::collection::vec(0u8..2, 10..120), k in 2usize..10, seed in 0u64..50) {
            let f = stratified_folds(&labels, k, seed, 0).unwrap();
            let mut size = vec![0i64; k];
            let mut pos = vec![0i64; k];
            for (i, &fi) in f.iter().enumerate() {
                size[fi] += 1;
                pos[fi] += i64::from(labels[i]);
            }
            prop_assert!(size.iter().max().unwrap() - size.iter().min().unwrap() <= 1);
            prop_assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
            prop_assert_eq!(stratified_folds(&labels, k, seed, 0).unwrap(), f);
        }
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_ci(&[0.7; 8], 200, 0.95, 1).unwrap(), (0.7, 0.7));
        let v: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let (lo, hi) = bootstrap_ci(&v, 1000, 0.95, 3).unwrap();
        assert!(lo < 0.5 && 0.5 < hi);
        assert!(bootstrap_ci(&[], 10, 0.95, 0).is_err());
    }

    #[test]
    fn bootstrap_matches_independent_resampler() {
        use rand::RngCore;
        use rand_chacha::rand_core::SeedableRng;
        let values = [0.6, 0.62, 0.64, 0.66, 0.7];
        let seed = 2024u64;
        let mut means = Vec::new();
        for b in 0..1000u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 3u64.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            rng.set_stream(b);
            let mut s = 0.0;
            for _ in 0..5 {
                let u = (rng.next_u64() >> 11) as f64 / 9007199254740992.0;
                s += values[((u * 5.0) as usize).min(4)];
            }
            means.push(s / 5.0);
        }
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = (means[24], means[974]);
        let got = bootstrap_ci(&values, 1000, 0.95, seed).unwrap();
        assert!((got.0 - lo).abs() < 1e-12 && (got.1 - hi).abs() < 1e-12);
    }

    #[test]
    fn cv_with_constant_and_oracle_features() {
        let labels: Vec<u8> = (0..60).map(|i| (i % 3 == 0) as u8).collect();
        let cfg = CvConfig {
            folds: 5,
            repeats: 2,
            seed: 9,
            n_boot: 100,
            ..CvConfig::default()
        };
        let constant = |s: &Split| {
            Ok(FoldDesign {
                train: Array2::zeros((s.train.len(), 1)),
                test: Array2::zeros((s.test.len(), 1)),
                names: vec!["c".into()],
            })
        };
        let r = repeated_cv(&labels, &cfg, constant).unwrap();
        assert!(r.fold_aucs.iter().all(|&a| a == 0.5));
        assert_eq!((r.ci_lower, r.ci_upper), (0.5, 0.5));
        assert_eq!(r.fold_aucs.len(), 10);

        let oracle = |s: &Split| {
            let col = |idx: &[usize]| Array2::from_shape_fn((idx.len(), 1), |(r, _)| f64::from(labels[idx[r]]));
            Ok(FoldDesign {
                train: col(s.train),
                test: col(s.test),
                names: vec!["y".into()],
            })
        };
        let r2 = repeated_cv(&labels, &cfg, oracle).unwrap();
        assert_eq!(r2.mean_auc, 1.0);
        assert!(r2.selected_terms.iter().all(|t| t == &vec!["y".to_string()]));
        assert_eq!(r2.assignments, r.assignments);
    }

    #[test]
    fn too_few_positives_is_degenerate() {
        let labels: Vec<u8> = (0..30).map(|i| (i < 3) as u8).collect();
        let cfg = CvConfig {
            folds: 5,
            repeats: 1,
            ..CvConfig::default()
        };
        let b = |s: &Split| {
            Ok(FoldDesign {
                train: Array2::zeros((s.train.len(), 0)),
                test: Array2::zeros((s.test.len(), 0)),
                names: vec![],
            })
        };
        assert!(matches!(repeated_cv(&labels, &cfg, b), Err(Error::DegenerateFold { rep: 0, .. })));
    }
}
