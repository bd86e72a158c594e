use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A seeded partition of `0..n` into `k` near-equal folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid("k", format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::invalid("k", format!("{k} folds for only {n} examples")));
    }
    let perm = permutation(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let mut fold = perm[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Train / validation / test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holdout {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn holdout(n: usize, val_fraction: f64, test_fraction: f64, seed: u64) -> Result<Holdout> {
    for (name, v) in [("val_fraction", val_fraction), ("test_fraction", test_fraction)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::invalid(name, format!("{v} is outside [0, 1)")));
        }
    }
    let n_val = (n as f64 * val_fraction).round() as usize;
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_val + n_test >= n || (val_fraction > 0.0 && n_val == 0) {
        return Err(Error::invalid(
            "val_fraction",
            format!("splits of {n} examples leave no room for training"),
        ));
    }
    let perm = permutation(n, seed);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Holdout {
        test: sorted(&perm[..n_test]),
        val: sorted(&perm[n_test..n_test + n_val]),
        train: sorted(&perm[n_test + n_val..]),
    })
}

/// Hold out `fraction` of `indices` (at least one) for validation.
pub fn carve_validation(indices: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = ((indices.len() as f64 * fraction).round() as usize).max(1);
    if n_val >= indices.len() {
        return Err(Error::invalid("val_fraction", "no examples left for training"));
    }
    let perm = permutation(indices.len(), seed);
    let mut val: Vec<usize> = perm[..n_val].iter().map(|&i| indices[i]).collect();
    let mut train: Vec<usize> = perm[n_val..].iter().map(|&i| indices[i]).collect();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, rng::tags::SPLIT));
    idx
}
