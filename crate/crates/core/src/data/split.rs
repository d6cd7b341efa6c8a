use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SegSample;
use crate::error::{ensure, Error, Result};

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<SegSample>,
    pub val: Vec<SegSample>,
    pub test: Vec<SegSample>,
}

/// Partition by base id so augmented variants of one original stay together.
pub fn split(corpus: &[SegSample], ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    if corpus.is_empty() {
        return Err(Error::Value("cannot split an empty corpus".into()));
    }
    let (a, b, c) = ratios;
    ensure!(
        a >= 0.0 && b >= 0.0 && c >= 0.0 && (a + b + c - 1.0).abs() < 1e-9,
        "split ratios must be non-negative and sum to 1, got {ratios:?}"
    );
    let mut bases: Vec<&str> = corpus
        .iter()
        .map(|s| s.base_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    bases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = bases.len();
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let train: BTreeSet<&str> = bases[..n_train].iter().copied().collect();
    let val: BTreeSet<&str> = bases[n_train..n_train + n_val].iter().copied().collect();
    let mut out = Split::default();
    for s in corpus {
        let b = s.base_id.as_str();
        if train.contains(b) {
            out.train.push(s.clone());
        } else if val.contains(b) {
            out.val.push(s.clone());
        } else {
            out.test.push(s.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{augment, AugmentKind, AugmentOp};
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn corpus(n: usize) -> Vec<SegSample> {
        (0..n)
            .map(|i| SegSample::new(format!("s{i:03}"), Tensor::zeros(&[1, 2, 2]), Tensor::zeros(&[1, 2, 2])).unwrap())
            .collect()
    }

    #[test]
    fn hundred_bases_split_80_10_10() {
        let s = split(&corpus(100), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        assert_eq!(s, split(&corpus(100), DEFAULT_RATIOS, 1).unwrap());
        assert_ne!(s, split(&corpus(100), DEFAULT_RATIOS, 2).unwrap());
    }

    #[test]
    fn empty_corpus_and_bad_ratios() {
        assert!(split(&[], DEFAULT_RATIOS, 0).is_err());
        assert!(split(&corpus(3), (0.5, 0.5, 0.5), 0).is_err());
    }

    proptest! {
        #[test]
        fn no_base_id_straddles_splits(n in 1usize..40, aug in 0usize..3, seed in 0u64..1000) {
            let mut all = corpus(n);
            for s in corpus(n) {
                for k in AugmentKind::ALL.iter().take(aug) {
                    all.push(augment(&s, AugmentOp::new(*k)).unwrap());
                }
            }
            let sp = split(&all, DEFAULT_RATIOS, seed).unwrap();
            prop_assert_eq!(sp.train.len() + sp.val.len() + sp.test.len(), all.len());
            let ids = |v: &[SegSample]| v.iter().map(|s| s.base_id.clone()).collect::<BTreeSet<_>>();
            let (a, b, c) = (ids(&sp.train), ids(&sp.val), ids(&sp.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            let mut got: Vec<String> = sp.train.iter().chain(&sp.val).chain(&sp.test).map(|s| s.id.clone()).collect();
            let mut want: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
            got.sort();
            want.sort();
            prop_assert_eq!(got, want);
        }
    }
}
