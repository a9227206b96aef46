//! Per-channel pixel statistics over synthetic training images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labels::{Domain, Split};
use super::record::SampleRecord;
use crate::imageio::FloatImage;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    /// Population standard deviation.
    pub std: [f64; 3],
    pub pixel_count: u64,
}

impl NormStats {
    /// Identity normalisation (mean 0, std 1).
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
            pixel_count: 0,
        }
    }

    /// Divisor used when normalising; guards against zero variance.
    pub fn safe_std(&self, c: usize) -> f32 {
        (self.std[c] as f32).max(1e-6)
    }
}

/// Running moments for one image, merged pairwise.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: [f64; 3],
    m2: [f64; 3],
}

impl Moments {
    fn of_image(img: &FloatImage) -> Self {
        let n = (img.width * img.height) as u64;
        let mut mean = [0.0f64; 3];
        for px in img.data.chunks_exact(3) {
            for c in 0..3 {
                mean[c] += px[c] as f64;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut m2 = [0.0f64; 3];
        for px in img.data.chunks_exact(3) {
            for c in 0..3 {
                let d = px[c] as f64 - mean[c];
                m2[c] += d * d;
            }
        }
        Self { n, mean, m2 }
    }

    fn merge(self, other: Self) -> Self {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let mut mean = [0.0; 3];
        let mut m2 = [0.0; 3];
        for c in 0..3 {
            let delta = other.mean[c] - self.mean[c];
            mean[c] = self.mean[c] + delta * other.n as f64 / n as f64;
            m2[c] = self.m2[c] + other.m2[c] + delta * delta * self.n as f64 * other.n as f64 / n as f64;
        }
        Self { n, mean, m2 }
    }
}

/// Statistics over the pixels of synthetic training images, loaded at `size`.
/// Real and non-train records are ignored.
pub fn compute_normalization(records: &[SampleRecord], size: Option<usize>) -> Result<NormStats> {
    let train: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| r.domain == Domain::Synthetic && r.split == Split::Train)
        .collect();
    if train.is_empty() {
        return Err(Error::data("normalisation needs at least one synthetic training image"));
    }
    let per_image: Vec<Moments> = train
        .par_iter()
        .map(|r| r.image.load(size).map(|img| Moments::of_image(&img)))
        .collect::<Result<_>>()?;
    // sequential fold keeps the result independent of thread scheduling
    let total = per_image.into_iter().fold(Moments::default(), Moments::merge);
    let mut std = [0.0; 3];
    for c in 0..3 {
        std[c] = (total.m2[c] / total.n as f64).max(0.0).sqrt();
    }
    Ok(NormStats {
        mean: total.mean,
        std,
        pixel_count: total.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::labels::{DamageLabels, Phase};
    use crate::datamodel::record::ImageRef;
    use crate::synthgen::damage::Dirt;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn rec(img: FloatImage, domain: Domain) -> SampleRecord {
        SampleRecord {
            image: ImageRef::Memory(Arc::new(img)),
            key: "k".into(),
            instance_id: if domain == Domain::Real { -1 } else { 0 },
            model: None,
            phase: Phase::Before,
            labels: DamageLabels::default(),
            dirt: Dirt::None,
            view_index: 0,
            background_index: 0,
            render_index: 0,
            domain,
            split: Split::Train,
        }
    }

    #[test]
    fn constant_gray() {
        let rs = vec![rec(FloatImage::filled(4, 4, [0.5; 3]), Domain::Synthetic)];
        let s = compute_normalization(&rs, None).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(s.mean[c], 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(s.std[c], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_images_closed_form() {
        // image A: 4 pixels at 0.2, image B: 2×2 with values 0.4, 0.6, 0.8, 1.0 in channel 0
        let a = FloatImage::filled(2, 2, [0.2, 0.0, 1.0]);
        let mut b = FloatImage::filled(2, 2, [0.0, 0.0, 1.0]);
        for (i, v) in [0.4f32, 0.6, 0.8, 1.0].into_iter().enumerate() {
            b.set(i % 2, i / 2, 0, v);
        }
        let s = compute_normalization(&[rec(a, Domain::Synthetic), rec(b, Domain::Synthetic)], None).unwrap();
        let vals = [0.2f32, 0.2, 0.2, 0.2, 0.4, 0.6, 0.8, 1.0].map(|v| v as f64);
        let mean = vals.iter().sum::<f64>() / 8.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert_abs_diff_eq!(s.mean[0], mean, epsilon = 1e-6);
        assert_abs_diff_eq!(s.std[0], var.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(s.std[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean[2], 1.0, epsilon = 1e-12);
        assert_eq!(s.pixel_count, 8);
    }

    #[test]
    fn real_images_excluded() {
        let rs = vec![
            rec(FloatImage::filled(2, 2, [0.5; 3]), Domain::Synthetic),
            rec(FloatImage::filled(2, 2, [0.9; 3]), Domain::Real),
        ];
        assert_abs_diff_eq!(compute_normalization(&rs, None).unwrap().mean[0], 0.5, epsilon = 1e-12);
        assert!(compute_normalization(&rs[1..], None).is_err());
    }
}
