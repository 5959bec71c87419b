use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePlan {
    pub order: Vec<usize>,
    pub weighted: bool,
}

/// Ratio of the largest to the smallest class count.
pub fn imbalance_ratio(labels: &[usize]) -> Result<f64> {
    let counts = class_counts(labels)?;
    let max = *counts.iter().max().expect("non-empty");
    let min = *counts.iter().min().expect("non-empty");
    Ok(max as f64 / min as f64)
}

fn class_counts(labels: &[usize]) -> Result<Vec<usize>> {
    let n_classes = labels.iter().max().map(|m| m + 1).ok_or(Error::EmptyClass("no labels".into()))?;
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(format!("class {c} has no samples")));
    }
    Ok(counts)
}

/// One epoch's sample order. Balanced data (max/min <= threshold) gets a
/// seeded permutation; otherwise `N` draws with replacement, each sample
/// weighted by the inverse of its class count so every class is drawn with
/// probability `1 / C`.
pub fn build_sampler(labels: &[usize], threshold: f64, seed: u64) -> Result<SamplePlan> {
    let counts = class_counts(labels)?;
    let mut rng = SplitMix64::new(seed);
    let max = *counts.iter().max().expect("non-empty");
    let min = *counts.iter().min().expect("non-empty");
    if (max as f64 / min as f64) <= threshold {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        rng.shuffle(&mut order);
        return Ok(SamplePlan { order, weighted: false });
    }
    let mut members = vec![Vec::new(); counts.len()];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    // Inverse-frequency weights sum to one per class, so drawing a class
    // uniformly and then a member uniformly is the same distribution.
    let order = (0..labels.len())
        .map(|_| {
            let class = &members[rng.below(members.len() as u64) as usize];
            class[rng.below(class.len() as u64) as usize]
        })
        .collect();
    Ok(SamplePlan { order, weighted: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(a: usize, b: usize) -> Vec<usize> {
        std::iter::repeat_n(0, a).chain(std::iter::repeat_n(1, b)).collect()
    }

    #[test]
    fn balanced_is_a_permutation() {
        let plan = build_sampler(&labels(10, 10), 1.5, 3).unwrap();
        assert!(!plan.weighted);
        let mut sorted = plan.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn ratio_exactly_at_threshold_is_not_weighted() {
        assert!(!build_sampler(&labels(15, 10), 1.5, 0).unwrap().weighted);
        assert!(build_sampler(&labels(16, 10), 1.5, 0).unwrap().weighted);
    }

    #[test]
    fn weighted_sampling_balances_classes() {
        let l = labels(30, 10);
        let mut minority = 0usize;
        let mut total = 0usize;
        for epoch in 0..2000 {
            let plan = build_sampler(&l, 1.5, epoch).unwrap();
            assert!(plan.weighted);
            minority += plan.order.iter().filter(|&&i| l[i] == 1).count();
            total += plan.order.len();
        }
        let freq = minority as f64 / total as f64;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    #[test]
    fn errors() {
        assert!(build_sampler(&[], 1.5, 0).is_err());
        assert!(build_sampler(&[0, 0, 2], 1.5, 0).is_err());
    }
}
