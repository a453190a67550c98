//! Minimal RGB raster with channel values nominally in `[0, 1]`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(Error::shape(format!(
                "{width}x{height} image with {} pixels",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn clamped(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect(),
        }
    }

    /// Peak signal-to-noise ratio in dB against `other` with peak 1.0.
    pub fn psnr(&self, other: &Self) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape("psnr of differently sized images"));
        }
        let mse = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).powi(2)))
            .sum::<f64>()
            / (3 * self.pixels.len()) as f64;
        Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
    }
}
