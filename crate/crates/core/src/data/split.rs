use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Minimum samples per class accepted by [`stratified_split`].
pub const MIN_PER_CLASS: usize = 10;

/// Index sets into a dataset. Each list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn by_class<'a>(labels: &[u8], pool: impl Iterator<Item = &'a usize>) -> BTreeMap<u8, Vec<usize>> {
    let mut classes: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for &i in pool {
        classes.entry(labels[i]).or_default().push(i);
    }
    classes
}

/// Per-class shuffled split. Validation and test sizes are `round(ratio * n_c)`
/// for each class `c`; training takes the remainder.
pub fn stratified_split(labels: &[u8], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be in [0, 1] and sum to 1"
        )));
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let mut out = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut idx) in by_class(labels, all.iter()) {
        let n = idx.len();
        if n < MIN_PER_CLASS {
            return Err(Error::InsufficientData(format!(
                "class {class} has {n} samples, need at least {MIN_PER_CLASS}"
            )));
        }
        idx.shuffle(&mut seed::rng(seed::derive(seed, &[0x5911, u64::from(class)])));
        let n_val = (va * n as f64).round() as usize;
        let n_test = ((te * n as f64).round() as usize).min(n - n_val);
        out.validation.extend_from_slice(&idx[..n_val]);
        out.test.extend_from_slice(&idx[n_val..n_val + n_test]);
        out.train.extend_from_slice(&idx[n_val + n_test..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Partitions `pool` into `k` class-stratified folds. Each fold is sorted.
pub fn stratified_folds(labels: &[u8], pool: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    for (class, mut idx) in by_class(labels, pool.iter()) {
        if idx.len() < k {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} samples for {k} folds",
                idx.len()
            )));
        }
        idx.sort_unstable();
        idx.shuffle(&mut seed::rng(seed::derive(seed, &[0xf01d, u64::from(class)])));
        for (pos, i) in idx.into_iter().enumerate() {
            folds[pos % k].push(i);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    const RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

    #[test]
    fn balanced_hundred_splits_exactly() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let s = stratified_split(&labels, RATIOS, 3).unwrap();
        for class in 0..2u8 {
            let count = |v: &[usize]| v.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!((count(&s.train), count(&s.validation), count(&s.test)), (40, 5, 5));
        }
        assert_eq!(s, stratified_split(&labels, RATIOS, 3).unwrap());
        assert_ne!(s, stratified_split(&labels, RATIOS, 4).unwrap());
    }

    #[test]
    fn small_class_is_rejected() {
        let mut labels = vec![0u8; 50];
        labels.extend([1u8; 9]);
        assert!(matches!(stratified_split(&labels, RATIOS, 0), Err(Error::InsufficientData(_))));
        assert!(matches!(stratified_split(&labels, (0.5, 0.1, 0.1), 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn folds_partition_the_pool() {
        let labels: Vec<u8> = (0..60).map(|i| (i % 3 == 0) as u8).collect();
        let pool: Vec<usize> = (0..60).filter(|i| i % 7 != 0).collect();
        let folds = stratified_folds(&labels, &pool, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, pool);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 2);
    }

    proptest! {
        #[test]
        fn split_is_disjoint_exhaustive_and_proportional(
            labels in prop::collection::vec(0u8..2, 20..300),
            seed in any::<u64>(),
        ) {
            let counts = [0u8, 1].map(|c| labels.iter().filter(|&&l| l == c).count());
            prop_assume!(counts.iter().all(|&n| n == 0 || n >= MIN_PER_CLASS));
            let s = stratified_split(&labels, RATIOS, seed).unwrap();
            let sets = [&s.train, &s.validation, &s.test].map(|v| v.iter().copied().collect::<BTreeSet<_>>());
            prop_assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
            prop_assert_eq!(sets.iter().map(BTreeSet::len).sum::<usize>(), labels.len());
            for class in 0..2u8 {
                let n = counts[class as usize] as f64;
                for (part, r) in [(&s.train, 0.8), (&s.validation, 0.1), (&s.test, 0.1)] {
                    let got = part.iter().filter(|&&i| labels[i] == class).count() as f64;
                    prop_assert!((got - r * n).abs() <= 1.0, "class {} got {} want {}", class, got, r * n);
                }
            }
        }
    }
}
