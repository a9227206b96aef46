//! Floating-point RGB images and PNG helpers.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::{Error, Result};

/// Interleaved RGB image with channel values in `[0, 1]` (HWC layout).
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size matches")
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at `i + 0.5`).
    pub fn sample_bilinear(&self, x: f32, y: f32, c: usize) -> f32 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f32);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f32);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f32;
        let ty = fy - y0 as f32;
        let top = self.get(x0, y0, c) * (1.0 - tx) + self.get(x1, y0, c) * tx;
        let bottom = self.get(x0, y1, c) * (1.0 - tx) + self.get(x1, y1, c) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Resample the axis-aligned window `(x0, y0, w, h)` to `out_w × out_h`.
    pub fn crop_resize(&self, x0: f32, y0: f32, w: f32, h: f32, out_w: usize, out_h: usize) -> Self {
        let mut out = FloatImage::new(out_w, out_h);
        let sx = w / out_w as f32;
        let sy = h / out_h as f32;
        for y in 0..out_h {
            let py = y0 + (y as f32 + 0.5) * sy;
            for x in 0..out_w {
                let px = x0 + (x as f32 + 0.5) * sx;
                for c in 0..3 {
                    out.set(x, y, c, self.sample_bilinear(px, py, c));
                }
            }
        }
        out
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> Self {
        if out_w == self.width && out_h == self.height {
            return self.clone();
        }
        self.crop_resize(0.0, 0.0, self.width as f32, self.height as f32, out_w, out_h)
    }

    /// Per-channel mean.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as f64;
            }
        }
        let n = (self.width * self.height).max(1) as f64;
        sums.map(|s| s / n)
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(format!("reading image {}", path.display()), io),
        other => Error::data(format!("decoding image {}: {other}", path.display())),
    })?;
    Ok(img.to_rgb8())
}

/// Load an image as floats, resizing to `size × size` when it differs.
pub fn load_float(path: &Path, size: Option<usize>) -> Result<FloatImage> {
    let img = FloatImage::from_rgb8(&load_rgb(path)?);
    Ok(match size {
        Some(s) => img.resize(s, s),
        None => img,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    Ok(())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_and_u8_roundtrip() {
        let mut img = FloatImage::new(4, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 256) as f32 / 255.0;
        }
        assert_eq!(img.resize(4, 3), img);
        let back = FloatImage::from_rgb8(&img.to_rgb8());
        assert_eq!(back, img);
    }

    #[test]
    fn constant_image_survives_crop_resize() {
        let img = FloatImage::filled(16, 16, [0.25, 0.5, 0.75]);
        let out = img.crop_resize(2.0, 3.0, 10.0, 11.0, 16, 16);
        assert!(out.data.iter().zip(img.data.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}
