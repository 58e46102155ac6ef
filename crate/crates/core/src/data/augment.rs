use std::path::PathBuf;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetManifest, Item, Origin};

/// Ranges the per-item transform parameters are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f32,
    pub contrast: (f32, f32),
    pub zoom: (f32, f32),
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            rotation_deg: 30.0,
            contrast: (0.7, 1.3),
            zoom: (0.8, 1.2),
        }
    }
}

fn sample_clamped(img: &RgbImage, x: f32, y: f32) -> [f32; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let px = |xi: i64, yi: i64| img.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32).0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (px(x0, y0), px(x0 + 1, y0), px(x0, y0 + 1), px(x0 + 1, y0 + 1));
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let top = f32::from(a[ch]) * (1.0 - fx) + f32::from(b[ch]) * fx;
        let bottom = f32::from(c[ch]) * (1.0 - fx) + f32::from(d[ch]) * fx;
        out[ch] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Rotates about the center, zooms, then scales contrast around the image
/// mean. Borders replicate edge pixels. A pure function of `(img, seed)`.
pub fn augment_image(img: &RgbImage, seed: u64, params: &AugmentParams) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = params.rotation_deg;
    let angle = rng.random_range(-r..=r).to_radians();
    let contrast = rng.random_range(params.contrast.0..=params.contrast.1);
    let zoom = rng.random_range(params.zoom.0..=params.zoom.1);

    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut warped = vec![[0.0f32; 3]; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = ((x as f32 - cx) / zoom, (y as f32 - cy) / zoom);
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            warped[(y * w + x) as usize] = sample_clamped(img, sx, sy);
        }
    }
    let n = warped.len() as f32 * 3.0;
    let mean = warped.iter().flatten().sum::<f32>() / n;
    RgbImage::from_fn(w, h, |x, y| {
        let p = warped[(y * w + x) as usize];
        Rgb(p.map(|v| ((v - mean) * contrast + mean).round().clamp(0.0, 255.0) as u8))
    })
}

fn augmented_path(original: &std::path::Path, k: usize) -> PathBuf {
    let stem = original.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    original.with_file_name(format!("{stem}__aug{k}.png"))
}

/// Each original is followed by `factor - 1` augmented descendants with
/// seeds drawn from `seed`. Images are not produced here; they are derived
/// on load (or written by the CLI).
pub fn augment(m: &DatasetManifest, factor: usize, seed: u64) -> Result<DatasetManifest, DataError> {
    if factor < 1 {
        return Err(DataError::InvalidFactor(factor));
    }
    if m.items.iter().any(|it| it.origin == Origin::Augmented) {
        return Err(DataError::AlreadyAugmented);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(m.items.len() * factor);
    for it in &m.items {
        let source = items.len();
        items.push(it.clone());
        for k in 1..factor {
            items.push(Item {
                path: augmented_path(&it.path, k),
                class: it.class,
                origin: Origin::Augmented,
                seed: rng.random(),
                source: Some(source),
            });
        }
    }
    Ok(DatasetManifest {
        root: m.root.clone(),
        classes: m.classes.clone(),
        items,
    })
}
