//! Balanced class weights and stratified k-fold assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub const DEFAULT_FOLDS: usize = 3;
/// Fold whose validation metrics are reported by default (the second fold).
pub const DEFAULT_REPORT_FOLD: usize = 1;

/// Per-class loss multipliers, indexed by class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        Self(vec![1.0; n_classes])
    }

    #[inline]
    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }
}

pub fn class_counts(labels: &[usize], n_classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        *counts.get_mut(y).ok_or_else(|| {
            Error::InvalidArgument(format!("label {y} outside 0..{n_classes}"))
        })? += 1;
    }
    Ok(counts)
}

/// `w_c = n_samples / (n_classes * count_c)`.
pub fn compute_class_weights(labels: &[usize], n_classes: usize) -> Result<ClassWeights> {
    let counts = class_counts(labels, n_classes)?;
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass { class });
    }
    let n = labels.len() as f64;
    Ok(ClassWeights(
        counts
            .iter()
            .map(|&c| n / (n_classes * c) as f64)
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub fold_of: Vec<usize>,
}

/// Shuffles each class with one seeded stream (classes in ascending order),
/// then deals all classes round-robin into `k` folds, continuing the deal
/// from where the previous class stopped. Every fold gets `⌊n_c/k⌋` or
/// `⌈n_c/k⌉` members of class `c`, and fold sizes differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    let smallest = members
        .iter()
        .map(Vec::len)
        .filter(|&c| c > 0)
        .min()
        .unwrap_or(0);
    if k > smallest {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the smallest class count {smallest}"
        )));
    }

    let mut rng = RandomStream::new(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut dealt = 0usize;
    for class in &mut members {
        rng.shuffle(class);
        for &i in class.iter() {
            fold_of[i] = dealt % k;
            dealt += 1;
        }
    }
    Ok(FoldAssignment { k, seed, fold_of })
}

/// `(train, validation)` indices for fold `i`, both ascending.
pub fn fold_split(fa: &FoldAssignment, i: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if i >= fa.k {
        return Err(Error::InvalidArgument(format!(
            "fold {i} out of range 0..{}",
            fa.k
        )));
    }
    Ok((0..fa.fold_of.len()).partition(|&j| fa.fold_of[j] != i))
}

/// Checks every [`FoldAssignment`] invariant against `labels`; returns a
/// description of the first violation.
pub fn check_stratification(fa: &FoldAssignment, labels: &[usize]) -> std::result::Result<(), String> {
    if fa.fold_of.len() != labels.len() {
        return Err(format!(
            "{} fold ids for {} labels",
            fa.fold_of.len(),
            labels.len()
        ));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; fa.k];
    let mut per_class = vec![vec![0usize; n_classes]; fa.k];
    for (&f, &y) in fa.fold_of.iter().zip(labels) {
        if f >= fa.k {
            return Err(format!("fold id {f} out of range 0..{}", fa.k));
        }
        sizes[f] += 1;
        per_class[f][y] += 1;
    }
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    if *lo == 0 || hi - lo > 1 {
        return Err(format!("unbalanced fold sizes {sizes:?}"));
    }
    for c in 0..n_classes {
        let n_c = labels.iter().filter(|&&y| y == c).count();
        for (f, counts) in per_class.iter().enumerate() {
            let diff = counts[c] as f64 - n_c as f64 / fa.k as f64;
            if diff.abs() >= 1.0 {
                return Err(format!(
                    "fold {f} holds {} of class {c} (expected about {:.2})",
                    counts[c],
                    n_c as f64 / fa.k as f64
                ));
            }
        }
    }
    Ok(())
}

/// Carves `round(fraction * n_c)` members of every class into a held-out set.
/// Returns `(pool, holdout)`, both ascending.
pub fn stratified_holdout(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {fraction} not in [0,1)"
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut held = vec![false; labels.len()];
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        RandomStream::substream(seed, c as u64).shuffle(&mut members);
        let take = (fraction * members.len() as f64).round() as usize;
        for &i in &members[..take] {
            held[i] = true;
        }
    }
    Ok((0..labels.len()).partition(|&i| !held[i]))
}
