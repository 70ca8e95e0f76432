//! 8-bit RGB images and their conversion to and from network tensors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::{Scalar, Tensor};

/// Interleaved row-major RGB, 8 bits per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(CoreError::Shape(format!(
                "rgb buffer length {} != {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luminance, one f64 per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// Largest absolute per-channel difference between two images.
    pub fn max_abs_diff(&self, other: &Rgb8Image) -> Result<u8> {
        if self.width != other.width || self.height != other.height {
            return Err(CoreError::Shape(format!(
                "image size mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.abs_diff(b))
            .max()
            .unwrap_or(0))
    }
}

/// Map 8-bit images into a [-1, 1] N×C×H×W batch: x ↦ x/127.5 − 1,
/// channels split into planes.
pub fn normalize_batch<F: Scalar>(images: &[&Rgb8Image]) -> Result<Tensor<F>> {
    let Some(first) = images.first() else {
        return Err(CoreError::Empty("normalize of zero images".into()));
    };
    let (w, h) = (first.width, first.height);
    let plane = w * h;
    let mut data = vec![F::zero(); images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.width != w || img.height != h {
            return Err(CoreError::Shape(format!(
                "image {n} is {}x{}, expected {w}x{h}",
                img.width, img.height
            )));
        }
        let base = n * 3 * plane;
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * plane + i] = F::from_f64(px[c] as f64 / 127.5 - 1.0);
            }
        }
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Inverse of [`normalize_batch`]: round to the nearest intensity and
/// clamp to [0, 255].
pub fn denormalize_batch<F: Scalar>(batch: &Tensor<F>) -> Result<Vec<Rgb8Image>> {
    let (n, c, h, w) = batch.dims4()?;
    if c != 3 {
        return Err(CoreError::Shape(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let mut img = Rgb8Image::black(w, h);
        let base = ni * 3 * plane;
        for i in 0..plane {
            let mut rgb = [0u8; 3];
            for (ch, slot) in rgb.iter_mut().enumerate() {
                let v = (batch.data()[base + ch * plane + i].as_f64() + 1.0) * 127.5;
                *slot = libm::round(v).clamp(0.0, 255.0) as u8;
            }
            img.data[i * 3..i * 3 + 3].copy_from_slice(&rgb);
        }
        out.push(img);
    }
    Ok(out)
}
