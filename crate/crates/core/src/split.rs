//! Stratified train/validation/test splits and k-fold assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

pub const TEST_FRACTION: f64 = 0.15;
pub const VAL_FRACTION: f64 = 0.15;
pub const FALLBACK_VAL_FRACTION: f64 = 0.20;
/// A held-out test set is required once 15% of every class reaches this many slides.
pub const MIN_TEST_PER_CLASS: usize = 5;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    ThreeWay,
    TwoWayFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub policy_applied: SplitPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

fn members_by_class(labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::Config(format!("label {l} out of range for {n_classes} classes")))?
            .push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(format!("class {c} has no members")));
    }
    Ok(by_class)
}

fn floor_frac(n: usize, frac: f64) -> usize {
    // Guard against representation error, e.g. 0.15 * 100 = 15.000000000000002.
    (n as f64 * frac + 1e-9).floor() as usize
}

/// Per class: seeded shuffle, then contiguous test / val / train slices.
/// Three-way 15/15/rest when every class yields at least five test slides,
/// otherwise a two-way 20% validation split.
pub fn stratified_split(labels: &[usize], n_classes: usize, seed: u64) -> Result<SplitAssignment> {
    let by_class = members_by_class(labels, n_classes)?;
    let three_way = by_class.iter().all(|m| floor_frac(m.len(), TEST_FRACTION) >= MIN_TEST_PER_CLASS);
    let mut out = SplitAssignment {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        policy_applied: if three_way { SplitPolicy::ThreeWay } else { SplitPolicy::TwoWayFallback },
    };
    for (c, members) in by_class.into_iter().enumerate() {
        let mut members = members;
        substream(seed, "split/class", c as u64).shuffle(&mut members);
        let n = members.len();
        let (n_test, n_val) = if three_way {
            (floor_frac(n, TEST_FRACTION), floor_frac(n, VAL_FRACTION))
        } else {
            (0, floor_frac(n, FALLBACK_VAL_FRACTION))
        };
        out.test.extend_from_slice(&members[..n_test]);
        out.val.extend_from_slice(&members[n_test..n_test + n_val]);
        out.train.extend_from_slice(&members[n_test + n_val..]);
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_unstable();
    }
    Ok(out)
}

/// Stratified k-fold: per class, seeded shuffle then round-robin fold
/// assignment. Each class starts where the previous one stopped so fold
/// sizes stay balanced overall.
pub fn stratified_kfold(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config("k-fold requires k >= 2".into()));
    }
    let by_class = members_by_class(labels, n_classes)?;
    if let Some((c, m)) = by_class.iter().enumerate().find(|(_, m)| m.len() < k) {
        return Err(Error::Config(format!("class {c} has {} members, fewer than k = {k}", m.len())));
    }
    let mut fold_of = vec![0usize; labels.len()];
    let mut cursor = 0usize;
    for (c, members) in by_class.into_iter().enumerate() {
        let mut members = members;
        substream(seed, "kfold/class", c as u64).shuffle(&mut members);
        for idx in members {
            fold_of[idx] = cursor % k;
            cursor += 1;
        }
    }
    Ok((0..k)
        .map(|f| Fold {
            train: (0..labels.len()).filter(|&i| fold_of[i] != f).collect(),
            val: (0..labels.len()).filter(|&i| fold_of[i] == f).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(per_class: usize, classes: usize) -> Vec<usize> {
        (0..per_class * classes).map(|i| i % classes).collect()
    }

    fn count(idx: &[usize], labels: &[usize], class: usize) -> usize {
        idx.iter().filter(|&&i| labels[i] == class).count()
    }

    #[test]
    fn hundred_per_class_is_three_way() {
        let labels = balanced(100, 2);
        let s = stratified_split(&labels, 2, 7).unwrap();
        assert_eq!(s.policy_applied, SplitPolicy::ThreeWay);
        for c in 0..2 {
            assert_eq!(count(&s.test, &labels, c), 15);
            assert_eq!(count(&s.val, &labels, c), 15);
            assert_eq!(count(&s.train, &labels, c), 70);
        }
    }

    #[test]
    fn thirty_per_class_falls_back() {
        let labels = balanced(30, 2);
        let s = stratified_split(&labels, 2, 7).unwrap();
        assert_eq!(s.policy_applied, SplitPolicy::TwoWayFallback);
        assert!(s.test.is_empty());
        for c in 0..2 {
            assert_eq!(count(&s.train, &labels, c), 24);
            assert_eq!(count(&s.val, &labels, c), 6);
        }
    }

    #[test]
    fn boundary_at_34_per_class() {
        // floor(0.15 * 33) = 4, floor(0.15 * 34) = 5.
        assert_eq!(stratified_split(&balanced(33, 2), 2, 0).unwrap().policy_applied, SplitPolicy::TwoWayFallback);
        assert_eq!(stratified_split(&balanced(34, 2), 2, 0).unwrap().policy_applied, SplitPolicy::ThreeWay);
    }

    #[test]
    fn deterministic_per_seed() {
        let labels = balanced(50, 3);
        assert_eq!(stratified_split(&labels, 3, 1).unwrap(), stratified_split(&labels, 3, 1).unwrap());
        assert_ne!(stratified_split(&labels, 3, 1).unwrap(), stratified_split(&labels, 3, 2).unwrap());
    }

    #[test]
    fn empty_class_is_an_error() {
        assert!(matches!(stratified_split(&[0, 0, 0], 2, 0), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn kfold_ten_per_class() {
        let labels = balanced(10, 2);
        let folds = stratified_kfold(&labels, 2, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = vec![0; labels.len()];
        for f in &folds {
            for c in 0..2 {
                assert_eq!(count(&f.val, &labels, c), 2);
            }
            for &i in &f.val {
                seen[i] += 1;
            }
            assert_eq!(f.train.len() + f.val.len(), labels.len());
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn kfold_rejects_small_class() {
        assert!(stratified_kfold(&[0, 0, 0, 1, 1], 2, 3, 0).is_err());
    }
}
