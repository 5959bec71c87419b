use ndarray::Axis;

use crate::model::Mode;
use crate::rng::SplitMix64;
use crate::store::PatchFeatureBag;

/// Patch dropout: in train mode remove `floor(rate * P)` uniformly chosen
/// patches, always keeping at least one. Kept patches stay in order.
pub fn patch_dropout(bag: &PatchFeatureBag, rate: f64, seed: u64, mode: Mode) -> PatchFeatureBag {
    let p = bag.patch_count();
    let remove = ((rate * p as f64).floor() as usize).min(p.saturating_sub(1));
    if mode == Mode::Eval || remove == 0 {
        return bag.clone();
    }
    let mut order: Vec<usize> = (0..p).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let mut keep = order[remove..].to_vec();
    keep.sort_unstable();
    PatchFeatureBag { features: bag.features.select(Axis(0), &keep), ..bag.clone() }
}
