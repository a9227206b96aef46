//! Colour-preserving augmentation: flip, crop-and-resize, blur, pixel noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imageio::FloatImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip: bool,
    pub crop: bool,
    pub blur: bool,
    pub noise: bool,
    pub flip_prob: f64,
    /// Smallest crop side as a fraction of the image side.
    pub crop_min_scale: f64,
    pub blur_prob: f64,
    /// Noise standard deviation is drawn from `[0, noise_max_std]`.
    pub noise_max_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            crop: true,
            blur: true,
            noise: true,
            flip_prob: 0.5,
            crop_min_scale: 0.8,
            blur_prob: 0.2,
            noise_max_std: 0.02,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flip: false,
            crop: false,
            blur: false,
            noise: false,
            ..Self::default()
        }
    }
}

pub fn hflip(img: &FloatImage) -> FloatImage {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                out.set(img.width - 1 - x, y, c, img.get(x, y, c));
            }
        }
    }
    out
}

/// 3×3 binomial blur with clamped borders.
pub fn blur3(img: &FloatImage) -> FloatImage {
    const K: [f32; 3] = [0.25, 0.5, 0.25];
    let mut out = img.clone();
    let (w, h) = (img.width as isize, img.height as isize);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (dy, ky) in (-1..=1).zip(K) {
                    for (dx, kx) in (-1..=1).zip(K) {
                        let sx = (x + dx).clamp(0, w - 1) as usize;
                        let sy = (y + dy).clamp(0, h - 1) as usize;
                        acc += ky * kx * img.get(sx, sy, c);
                    }
                }
                out.set(x as usize, y as usize, c, acc);
            }
        }
    }
    out
}

/// Apply the enabled augmentations in a fixed order. Draws are made for every
/// augmentation, enabled or not, so toggling one does not shift the others.
pub fn augment<R: Rng>(img: &FloatImage, cfg: &AugmentConfig, rng: &mut R) -> FloatImage {
    let do_flip = rng.random_bool(cfg.flip_prob.clamp(0.0, 1.0));
    let scale = rng.random_range(cfg.crop_min_scale.clamp(0.05, 1.0)..=1.0);
    let (ox, oy): (f64, f64) = (rng.random(), rng.random());
    let do_blur = rng.random_bool(cfg.blur_prob.clamp(0.0, 1.0));
    let sigma = rng.random_range(0.0..=cfg.noise_max_std.max(0.0));
    let noise_seed: u64 = rng.random();

    let mut out = img.clone();
    if cfg.flip && do_flip {
        out = hflip(&out);
    }
    if cfg.crop && scale < 1.0 {
        let cw = img.width as f64 * scale;
        let ch = img.height as f64 * scale;
        let x0 = ox * (img.width as f64 - cw);
        let y0 = oy * (img.height as f64 - ch);
        out = out.crop_resize(x0 as f32, y0 as f32, cw as f32, ch as f32, img.width, img.height);
    }
    if cfg.blur && do_blur {
        out = blur3(&out);
    }
    if cfg.noise && sigma > 0.0 {
        let normal = Normal::new(0.0f32, sigma as f32).expect("finite sigma");
        let mut nrng = crate::seed::rng(noise_seed);
        for v in &mut out.data {
            *v = (*v + normal.sample(&mut nrng)).clamp(0.0, 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn gradient_image(n: usize) -> FloatImage {
        let mut img = FloatImage::new(n, n);
        for y in 0..n {
            for x in 0..n {
                img.set(x, y, 0, x as f32 / n as f32);
                img.set(x, y, 1, 0.5);
                img.set(x, y, 2, y as f32 / n as f32);
            }
        }
        img
    }

    #[test]
    fn all_off_is_identity() {
        let img = gradient_image(16);
        assert_eq!(augment(&img, &AugmentConfig::none(), &mut seed::rng(3)), img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = gradient_image(9);
        assert_eq!(hflip(&hflip(&img)), img);
        let forced = AugmentConfig {
            flip_prob: 1.0,
            ..AugmentConfig::none()
        };
        let forced = AugmentConfig { flip: true, ..forced };
        let once = augment(&img, &forced, &mut seed::rng(1));
        assert_ne!(once, img);
        assert_eq!(augment(&once, &forced, &mut seed::rng(2)), img);
    }

    #[test]
    fn colour_is_preserved() {
        // a uniform image keeps its colour under every combination
        let img = FloatImage::filled(24, 24, [0.2, 0.6, 0.4]);
        for mask in 0..16u32 {
            let cfg = AugmentConfig {
                flip: mask & 1 != 0,
                crop: mask & 2 != 0,
                blur: mask & 4 != 0,
                noise: mask & 8 != 0,
                blur_prob: 1.0,
                ..AugmentConfig::default()
            };
            for s in 0..4 {
                let m = augment(&img, &cfg, &mut seed::rng(s)).channel_means();
                for c in 0..3 {
                    assert!((m[c] - img.channel_means()[c]).abs() < 0.005, "mask {mask}: {m:?}");
                }
            }
        }
    }
}
