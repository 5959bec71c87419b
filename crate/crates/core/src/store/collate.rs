use ndarray::{s, Array2, Array3, ArrayView2};
use num_traits::Float;

use super::PatchFeatureBag;
use crate::error::{Error, Result};

/// Zero-padded mini-batch of bags with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T = f32> {
    /// `B x Pmax x D`; rows past `lengths[b]` are zero.
    pub data: Array3<T>,
    /// `mask[b][p]` is true iff `p < lengths[b]`.
    pub mask: Array2<bool>,
    pub labels: Vec<Option<usize>>,
    pub lengths: Vec<usize>,
}

impl<T: Float> Batch<T> {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.data.dim().2
    }

    pub fn max_len(&self) -> usize {
        self.data.dim().1
    }

    /// The real (unpadded) patches of bag `b`.
    pub fn bag(&self, b: usize) -> ArrayView2<'_, T> {
        self.data.slice(s![b, ..self.lengths[b], ..])
    }

    pub fn cast<U: Float>(&self) -> Batch<U> {
        Batch {
            data: self.data.mapv(|v| U::from(v).expect("float cast")),
            mask: self.mask.clone(),
            labels: self.labels.clone(),
            lengths: self.lengths.clone(),
        }
    }
}

/// Pad `bags` to the longest bag and build the mask. No bag is truncated.
pub fn collate(bags: &[PatchFeatureBag]) -> Result<Batch<f32>> {
    let refs: Vec<&PatchFeatureBag> = bags.iter().collect();
    collate_refs(&refs)
}

pub(crate) fn collate_refs(bags: &[&PatchFeatureBag]) -> Result<Batch<f32>> {
    let first = bags.first().ok_or(Error::EmptyBatch)?;
    let dim = first.feature_dim();
    let lengths: Vec<usize> = bags.iter().map(|b| b.patch_count()).collect();
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let mut data = Array3::zeros((bags.len(), max_len, dim));
    let mut mask = Array2::from_elem((bags.len(), max_len), false);
    for (b, bag) in bags.iter().enumerate() {
        if bag.feature_dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: bag.feature_dim() });
        }
        data.slice_mut(s![b, ..lengths[b], ..]).assign(&bag.features);
        mask.slice_mut(s![b, ..lengths[b]]).fill(true);
    }
    Ok(Batch { data, mask, labels: bags.iter().map(|b| b.label).collect(), lengths })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(len: usize, dim: usize, fill: f32) -> PatchFeatureBag {
        PatchFeatureBag::new("c", "s", Array2::from_elem((len, dim), fill))
    }

    #[test]
    fn pads_to_longest() {
        let batch = collate(&[bag(3, 2, 1.0), bag(5, 2, 2.0)]).unwrap();
        assert_eq!(batch.max_len(), 5);
        assert_eq!(batch.mask.row(0).iter().filter(|m| **m).count(), 3);
        assert_eq!(batch.mask.row(1).iter().filter(|m| **m).count(), 5);
        assert_eq!(batch.data.slice(s![0, 3.., ..]).sum(), 0.0);
    }

    #[test]
    fn single_bag_is_identity() {
        let b = bag(4, 3, 0.5);
        let batch = collate(std::slice::from_ref(&b)).unwrap();
        assert!(batch.mask.iter().all(|m| *m));
        assert_eq!(batch.bag(0), b.features);
    }

    #[test]
    fn realistic_extremes_pad_with_zeros() {
        let batch = collate(&[bag(500, 2, 1.0), bag(50_000, 2, 1.0)]).unwrap();
        assert_eq!(batch.max_len(), 50_000);
        assert_eq!(batch.data.slice(s![0, 500.., ..]).sum(), 0.0);
        assert_eq!(batch.mask.row(0).iter().filter(|m| **m).count(), 500);
    }

    #[test]
    fn errors() {
        assert!(matches!(collate(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(collate(&[bag(2, 2, 0.0), bag(2, 3, 0.0)]), Err(Error::DimensionMismatch { .. })));
    }
}
