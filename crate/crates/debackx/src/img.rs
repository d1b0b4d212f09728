//! The pixel currency: `H x W x 3` arrays of intensities in `[0, 1]`.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

/// An RGB image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    /// All-black image of the given size.
    pub fn zeros(h: usize, w: usize) -> Self {
        Image {
            data: Array3::zeros((h, w, 3)),
        }
    }

    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        if data.dim().2 != 3 {
            return Err(Error::Input(format!(
                "image must have 3 channels, got {}",
                data.dim().2
            )));
        }
        Ok(Image { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[(r, c, ch)]
    }

    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: f64) {
        self.data[(r, c, ch)] = v;
    }

    /// Clamp all intensities into `[lo, hi]`.
    pub fn clamp(&mut self, lo: f64, hi: f64) {
        self.data.mapv_inplace(|v| v.clamp(lo, hi));
    }

    /// Mean squared error over all pixels and channels.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::Input(format!(
                "image shape mismatch: {:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        let n = self.data.len() as f64;
        let sum: f64 = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / n)
    }

    /// Quantize to 8-bit, matching the on-disk PNG representation.
    pub fn quantize(&self) -> Image {
        let data = self
            .data
            .mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        Image { data }
    }

    /// Mean intensity over all pixels and channels.
    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    /// Per-pixel grayscale (channel mean), row-major.
    pub fn grayscale(&self) -> Vec<f64> {
        let (h, w) = self.dims();
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                out.push((self.get(r, c, 0) + self.get(r, c, 1) + self.get(r, c, 2)) / 3.0);
            }
        }
        out
    }

    /// Write as an 8-bit RGB PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = self.dims();
        let mut buf = Vec::with_capacity(h * w * 3);
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    buf.push((self.get(r, c, ch).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
            .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Read an 8-bit RGB PNG.
    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)?.into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Array3::zeros((h, w, 3));
        for r in 0..h {
            for c in 0..w {
                let px = img.get_pixel(c as u32, r as u32);
                for ch in 0..3 {
                    data[(r, c, ch)] = px.0[ch] as f64 / 255.0;
                }
            }
        }
        Ok(Image { data })
    }
}
