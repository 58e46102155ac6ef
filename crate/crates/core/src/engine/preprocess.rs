//! Image decoding, bilinear resizing and value-range mapping.

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("undecodable image: {0}")]
    Undecodable(String),
    #[error("unsupported image format {0}; expected PNG or JPEG")]
    UnsupportedFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueRange {
    ZeroOne,
    MinusOneOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resize {
    Bilinear,
}

/// How raw images become the model's FP32 `(1, H, W, 3)` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub height: usize,
    pub width: usize,
    pub range: ValueRange,
    pub resize: Resize,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            height: 224,
            width: 224,
            range: ValueRange::MinusOneOne,
            resize: Resize::Bilinear,
        }
    }
}

impl PreprocessSpec {
    pub fn new(height: usize, width: usize, range: ValueRange) -> Self {
        PreprocessSpec {
            height,
            width,
            range,
            resize: Resize::Bilinear,
        }
    }

    pub fn map_value(&self, v: f32) -> f32 {
        match self.range {
            ValueRange::ZeroOne => v / 255.0,
            ValueRange::MinusOneOne => v / 127.5 - 1.0,
        }
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage, PreprocessError> {
    let format =
        image::guess_format(bytes).map_err(|e| PreprocessError::Undecodable(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(PreprocessError::UnsupportedFormat(format!("{format:?}")));
    }
    image::load_from_memory_with_format(bytes, format)
        .map(|img| img.to_rgb8())
        .map_err(|e| PreprocessError::Undecodable(e.to_string()))
}

pub fn preprocess(bytes: &[u8], spec: &PreprocessSpec) -> Result<Tensor, PreprocessError> {
    Ok(image_to_tensor(&decode_image(bytes)?, spec))
}

/// Bilinear sample positions (half-pixel centers, edge clamped) for one axis.
fn sample_axis(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let ratio = src as f32 / dst as f32;
    (0..dst)
        .map(|d| {
            let pos = ((d as f32 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f32);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f32)
        })
        .collect()
}

/// Bilinear resize of an RGB image into float pixel values (0 to 255).
pub fn resize_bilinear(img: &RgbImage, height: usize, width: usize) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let px = |y: usize, x: usize, c: usize| f32::from(raw[(y * w + x) * 3 + c]);
    if w == width && h == height {
        return raw.iter().map(|&v| f32::from(v)).collect();
    }
    let rows = sample_axis(h, height);
    let cols = sample_axis(w, width);
    let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
    let mut out = Vec::with_capacity(height * width * 3);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let top = lerp(px(y0, x0, c), px(y0, x1, c), fx);
                let bottom = lerp(px(y1, x0, c), px(y1, x1, c), fx);
                out.push(lerp(top, bottom, fy));
            }
        }
    }
    out
}

pub fn image_to_tensor(img: &RgbImage, spec: &PreprocessSpec) -> Tensor {
    let values = resize_bilinear(img, spec.height, spec.width)
        .into_iter()
        .map(|v| spec.map_value(v))
        .collect();
    Tensor::from_f32(vec![1, spec.height, spec.width, 3], values).expect("resize yields H*W*3 values")
}

/// Stacks `(1, H, W, C)` tensors along the batch axis.
pub fn stack_batch(items: &[Tensor]) -> Option<Tensor> {
    let first = items.first()?;
    let mut shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.len() * items.len());
    for t in items {
        if t.shape() != first.shape() {
            return None;
        }
        data.extend_from_slice(t.as_f32()?);
    }
    shape[0] *= items.len();
    Tensor::from_f32(shape, data).ok()
}
