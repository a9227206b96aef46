use rand::Rng;
use serde::{Deserialize, Serialize};

use super::library::ModelLibrary;
use super::palette::{NUM_COLORS, NUM_DECALS, NUM_PATTERNS};
use crate::seed;
use crate::Result;

/// One unique bicycle: a geometry model plus a material assignment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BikeInstance {
    pub instance_id: i64,
    pub model_name: String,
    pub base_color: usize,
    pub pattern_id: usize,
    pub pattern_color: usize,
    pub decal_id: usize,
}

impl BikeInstance {
    /// The tuple that must be unique per instance within a dataset.
    pub fn material_key(&self) -> (String, usize, usize, usize, usize) {
        (
            self.model_name.clone(),
            self.base_color,
            self.pattern_id,
            self.pattern_color,
            self.decal_id,
        )
    }
}

/// Draw a material assignment for `model_name`, uniformly over every pool.
/// The returned instance has `instance_id = 0`; dataset generation assigns ids.
pub fn sample_instance(library: &ModelLibrary, model_name: &str, seed: u64) -> Result<BikeInstance> {
    library.get(model_name)?;
    let mut rng = seed::derived_rng(seed, &[b"instance", model_name.as_bytes()]);
    Ok(BikeInstance {
        instance_id: 0,
        model_name: model_name.to_string(),
        pattern_id: rng.random_range(0..NUM_PATTERNS),
        base_color: rng.random_range(0..NUM_COLORS),
        pattern_color: rng.random_range(0..NUM_COLORS),
        decal_id: rng.random_range(0..NUM_DECALS),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_model_and_seed() {
        let lib = ModelLibrary::builtin();
        let a = sample_instance(&lib, "rondo", 0).unwrap();
        assert_eq!(a, sample_instance(&lib, "rondo", 0).unwrap());
        assert!(sample_instance(&lib, "no-such-bike", 0).is_err());
    }

    #[test]
    fn pattern_frequencies_are_uniform() {
        // Chi-square goodness of fit against the uniform distribution over 5 patterns,
        // plus the per-bin ±0.02 band.
        let lib = ModelLibrary::builtin();
        let n = 10_000;
        let mut counts = [0usize; NUM_PATTERNS];
        let mut decals = [0usize; NUM_DECALS];
        for s in 0..n {
            let inst = sample_instance(&lib, "rondo", s).unwrap();
            counts[inst.pattern_id] += 1;
            decals[inst.decal_id] += 1;
            assert!(inst.decal_id <= 9);
            assert!(inst.base_color < NUM_COLORS && inst.pattern_color < NUM_COLORS);
        }
        let expected = n as f64 / NUM_PATTERNS as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9% quantile of chi-square with 4 degrees of freedom
        assert!(chi2 < 18.47, "chi2 = {chi2}, counts = {counts:?}");
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() <= 0.02);
        }
        assert!(decals.iter().all(|&c| c > 0));
    }
}
