use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, DatasetManifest, Item};

/// Two synthetic skin-image classes: many small sharp lesions versus a few
/// broad diffuse patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthClass {
    Monkeypox,
    Others,
}

impl SynthClass {
    pub const ALL: [SynthClass; 2] = [SynthClass::Monkeypox, SynthClass::Others];

    pub fn name(self) -> &'static str {
        match self {
            SynthClass::Monkeypox => "Monkeypox",
            SynthClass::Others => "Others",
        }
    }
}

fn blend(p: &mut [f32; 3], color: [f32; 3], alpha: f32) {
    for c in 0..3 {
        p[c] = p[c] * (1.0 - alpha) + color[c] * alpha;
    }
}

pub fn synth_image(class: SynthClass, seed: u64, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(175.0..235.0f32);
    let g = r * rng.random_range(0.68..0.84f32);
    let b = g * rng.random_range(0.72..0.9f32);
    let s = size as f32;
    let mut px: Vec<[f32; 3]> = (0..size * size)
        .map(|_| {
            let n = rng.random_range(-6.0..6.0f32);
            [r + n, g + n, b + n]
        })
        .collect();
    let mut paint = |cx: f32, cy: f32, f: &dyn Fn(f32) -> Option<([f32; 3], f32)>| {
        for y in 0..size {
            for x in 0..size {
                let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                if let Some((color, alpha)) = f(d) {
                    blend(&mut px[(y * size + x) as usize], color, alpha);
                }
            }
        }
    };
    match class {
        SynthClass::Monkeypox => {
            for _ in 0..rng.random_range(8..15) {
                let (cx, cy) = (rng.random_range(0.1..0.9) * s, rng.random_range(0.1..0.9) * s);
                let radius = rng.random_range(0.05..0.09) * s;
                let ring = [rng.random_range(90.0..140.0), 35.0, 30.0];
                paint(cx, cy, &|d| {
                    if d <= radius * 0.5 {
                        Some(([245.0, 230.0, 190.0], 1.0))
                    } else if d <= radius {
                        Some((ring, 1.0))
                    } else {
                        None
                    }
                });
            }
        }
        SynthClass::Others => {
            for _ in 0..rng.random_range(1..4) {
                let (cx, cy) = (rng.random_range(0.2..0.8) * s, rng.random_range(0.2..0.8) * s);
                let radius = rng.random_range(0.2..0.4) * s;
                let strength = rng.random_range(0.3..0.55);
                paint(cx, cy, &|d| {
                    let a = strength * (-(d / radius).powi(2)).exp();
                    (a > 0.01).then_some(([205.0, 105.0, 95.0], a))
                });
            }
        }
    }
    RgbImage::from_fn(size, size, |x, y| {
        Rgb(px[(y * size + x) as usize].map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

/// Writes `per_class` PNGs per class under `root/<class>/` and returns the
/// matching manifest.
pub fn synth_dataset(root: &Path, per_class: usize, size: u32, seed: u64) -> Result<DatasetManifest, DataError> {
    let mut m = DatasetManifest {
        root: root.to_path_buf(),
        classes: SynthClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        items: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (ci, class) in SynthClass::ALL.into_iter().enumerate() {
        let dir = root.join(class.name());
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        for i in 0..per_class {
            let rel = Path::new(class.name()).join(format!("img_{i:04}.png"));
            let path = root.join(&rel);
            synth_image(class, rng.random(), size)
                .save(&path)
                .map_err(|e| DataError::Image {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
            m.items.push(Item::original(rel, ci));
        }
    }
    Ok(m)
}
