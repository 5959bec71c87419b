//! Planted-signal synthetic cohorts standing in for real slide features.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::PatchFeatureBag;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_cases_per_class: Vec<usize>,
    pub patches_min: usize,
    pub patches_max: usize,
    /// Fraction of patches in each bag that carry the class signal.
    pub signal_fraction: f64,
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_cases_per_class: vec![100, 100],
            patches_min: 64,
            patches_max: 512,
            signal_fraction: 0.15,
            signal_strength: 1.5,
            noise_sigma: 1.0,
            feature_dim: super::DEFAULT_FEATURE_DIM,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Slide sizes typical of real tissue: 500 to 50,000 patches.
    pub fn realistic() -> Self {
        Self { patches_min: 500, patches_max: 50_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.n_cases_per_class.is_empty() || self.n_cases_per_class.contains(&0) {
            return bad("every class needs at least one case");
        }
        if self.patches_min == 0 || self.patches_max < self.patches_min {
            return bad("require 1 <= patches_min <= patches_max");
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return bad("signal_fraction must be in (0, 1]");
        }
        if !self.signal_strength.is_finite() || !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("signal_strength and noise_sigma must be finite, sigma >= 0");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_cases_per_class.len()).map(|c| format!("class_{c}")).collect()
    }
}

fn class_direction(spec: &SyntheticSpec, class: usize) -> Array1<f64> {
    let mut rng = substream(spec.seed, "synthetic/direction", class as u64);
    let mut u = Array1::from_shape_fn(spec.feature_dim, |_| rng.gaussian());
    let norm = u.dot(&u).sqrt();
    u /= norm;
    u
}

/// Generate one single-slide case per bag, classes in order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<PatchFeatureBag>> {
    spec.validate()?;
    let directions: Vec<Array1<f64>> = (0..spec.n_cases_per_class.len()).map(|c| class_direction(spec, c)).collect();
    let mut bags = Vec::with_capacity(spec.n_cases_per_class.iter().sum());
    let mut serial = 0u64;
    for (class, &count) in spec.n_cases_per_class.iter().enumerate() {
        for _ in 0..count {
            let mut rng = substream(spec.seed, "synthetic/bag", serial);
            let patches = rng.range_inclusive(spec.patches_min as u64, spec.patches_max as u64) as usize;
            let mut features =
                Array2::from_shape_fn((patches, spec.feature_dim), |_| (spec.noise_sigma * rng.gaussian()) as f32);
            let n_signal = (spec.signal_fraction * patches as f64).ceil() as usize;
            let mut order: Vec<usize> = (0..patches).collect();
            rng.shuffle(&mut order);
            for &p in &order[..n_signal.min(patches)] {
                let mut row = features.row_mut(p);
                for (v, u) in row.iter_mut().zip(directions[class].iter()) {
                    *v += (spec.signal_strength * u) as f32;
                }
            }
            bags.push(
                PatchFeatureBag::new(format!("case-{serial:05}"), "slide-0", features).with_label(class),
            );
            serial += 1;
        }
    }
    Ok(bags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec { n_cases_per_class: vec![3, 2], patches_min: 4, patches_max: 9, feature_dim: 8, seed: 11, ..Default::default() }
    }

    #[test]
    fn deterministic_per_spec() {
        assert_eq!(generate_synthetic(&small()).unwrap(), generate_synthetic(&small()).unwrap());
        let other = SyntheticSpec { seed: 12, ..small() };
        assert_ne!(generate_synthetic(&small()).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn shapes_and_labels() {
        let bags = generate_synthetic(&small()).unwrap();
        assert_eq!(bags.len(), 5);
        assert_eq!(bags.iter().filter(|b| b.label == Some(0)).count(), 3);
        for b in &bags {
            assert!((4..=9).contains(&b.patch_count()));
            assert_eq!(b.feature_dim(), 8);
            b.validate(8).unwrap();
        }
    }

    #[test]
    fn signal_lies_along_class_direction() {
        let spec = SyntheticSpec { noise_sigma: 0.0, signal_fraction: 1.0, ..small() };
        let bags = generate_synthetic(&spec).unwrap();
        let u0 = class_direction(&spec, 0);
        let row = bags[0].features.row(0).mapv(f64::from);
        assert!((row.dot(&u0) - 1.5).abs() < 1e-5);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(generate_synthetic(&SyntheticSpec { signal_fraction: 0.0, ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { patches_min: 0, ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { n_cases_per_class: vec![2, 0], ..small() }).is_err());
    }
}
