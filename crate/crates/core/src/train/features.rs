use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::bundle::{to_hex, ModelBundle};
use crate::data::{AugmentParams, DatasetManifest, Origin};
use crate::engine::{image_to_tensor, run_forward, run_outputs};
use crate::tensor::Tensor;

/// Rows of the feature node's value for a batched input.
pub fn features_of(b: &ModelBundle, input: &Tensor) -> Result<Vec<Vec<f32>>, TrainError> {
    let node = b.metadata.feature_node.as_deref().ok_or(TrainError::NoFeatureNode)?;
    let graph = b.graph();
    let value = if let Some(pos) = graph.outputs.iter().position(|o| o == node) {
        run_outputs(b, input)?.swap_remove(pos)
    } else {
        if graph.node(node).is_none() {
            return Err(TrainError::NoFeatureNode);
        }
        run_forward(b, input)?.remove(node).ok_or(TrainError::NoFeatureNode)?
    };
    let rows = value.shape().first().copied().unwrap_or(1).max(1);
    let data = value.to_f32_vec();
    let width = data.len() / rows;
    Ok(data.chunks(width.max(1)).map(<[f32]>::to_vec).collect())
}

/// Frozen-backbone feature extraction with an optional on-disk cache keyed
/// by (bundle checksum, item). Counts forwards actually executed.
pub struct FeatureExtractor<'a> {
    bundle: &'a ModelBundle,
    cache_dir: Option<PathBuf>,
    params: AugmentParams,
    forwards: AtomicUsize,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(bundle: &'a ModelBundle) -> Self {
        FeatureExtractor {
            bundle,
            cache_dir: None,
            params: AugmentParams::default(),
            forwards: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn with_augment_params(mut self, params: AugmentParams) -> Self {
        self.params = params;
        self
    }

    pub fn forwards(&self) -> usize {
        self.forwards.load(Ordering::Relaxed)
    }

    fn forward(&self, img: &RgbImage) -> Result<Vec<f32>, TrainError> {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let t = image_to_tensor(img, &self.bundle.metadata.preprocess);
        Ok(features_of(self.bundle, &t)?.swap_remove(0))
    }

    fn cache_path(&self, m: &DatasetManifest, i: usize) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let it = &m.items[i];
        let mut h = Sha256::new();
        h.update(m.abs_path(i).to_string_lossy().as_bytes());
        h.update([u8::from(it.origin == Origin::Augmented)]);
        h.update(it.seed.to_le_bytes());
        let key = to_hex(&h.finalize());
        Some(dir.join(self.bundle.checksum_hex()).join(format!("{key}.f32")))
    }

    fn item(&self, m: &DatasetManifest, i: usize) -> Result<Vec<f32>, TrainError> {
        let cache = self.cache_path(m, i);
        if let Some(path) = &cache {
            if let Ok(bytes) = fs::read(path) {
                return Ok(bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect());
            }
        }
        let row = self.forward(&m.load_image(i, &self.params)?)?;
        if let Some(path) = cache {
            let io = |source| TrainError::Cache { path: path.clone(), source };
            fs::create_dir_all(path.parent().expect("cache file has a parent")).map_err(io)?;
            let bytes: Vec<u8> = row.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(&path, bytes).map_err(io)?;
        }
        Ok(row)
    }

    /// One feature row per manifest item, in manifest order.
    pub fn extract(&self, m: &DatasetManifest) -> Result<Vec<Vec<f32>>, TrainError> {
        (0..m.items.len()).into_par_iter().map(|i| self.item(m, i)).collect()
    }

    pub fn extract_images(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, TrainError> {
        images.par_iter().map(|img| self.forward(img)).collect()
    }
}
