//! Stratified k-fold splitting.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Split sample indices into k (train, test) pairs, stratified by label:
/// each class's members are shuffled under the seed and dealt round-robin
/// into the k test folds, so the folds are disjoint, exhaustive, and
/// class-balanced to within one sample.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k {} must be >= 2", k)));
    }
    if k > labels.len() {
        return Err(Error::InvalidConfig(format!(
            "k {} exceeds {} samples",
            k,
            labels.len()
        )));
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    for (class, members) in &by_class {
        if members.len() < k {
            return Err(Error::Stratification(format!(
                "class {} has {} members, fewer than k = {}",
                class,
                members.len(),
                k
            )));
        }
    }

    let mut rng = Rng::new(seed);
    let mut test_folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for members in by_class.values() {
        let mut shuffled = members.clone();
        rng.shuffle(&mut shuffled);
        for (pos, idx) in shuffled.into_iter().enumerate() {
            test_folds[pos % k].push(idx);
        }
    }

    let mut splits = Vec::with_capacity(k);
    for f in 0..k {
        let mut test = test_folds[f].clone();
        test.sort_unstable();
        let mut train: Vec<usize> = (0..labels.len()).filter(|i| !test.contains(i)).collect();
        train.sort_unstable();
        splits.push((train, test));
    }
    Ok(splits)
}
