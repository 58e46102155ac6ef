pub mod dataset;
pub mod measure;
pub mod model;
pub mod quantize;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use edgeclass_core::engine::preprocess;
use edgeclass_core::{load_bundle, ModelBundle, PreprocessSpec, Tensor};
use serde::Serialize;

use crate::failure::{self, Failure, Kind, Outcome, OrFail};

pub fn load_model(path: &Path) -> Outcome<ModelBundle> {
    Ok(load_bundle(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).or_fail(Kind::Internal)?;
    text.push('\n');
    failure::write(path, text)
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// PNG/JPEG files under `dir`, recursively, in sorted path order.
pub fn collect_images(dir: &Path) -> Outcome<Vec<PathBuf>> {
    let io = |e: std::io::Error| Failure::new(Kind::Io, anyhow::anyhow!("{}: {e}", dir.display()));
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.is_dir() {
                stack.push(path);
            } else if is_image(&path) {
                out.push(path);
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Failure::new(Kind::Data, anyhow::anyhow!("no PNG or JPEG images under {}", dir.display())));
    }
    Ok(out)
}

/// Up to `n` evenly spaced entries, first included.
pub fn spread<T: Clone>(items: &[T], n: usize) -> Vec<T> {
    if n == 0 || items.len() <= n {
        return items.to_vec();
    }
    (0..n).map(|i| items[i * items.len() / n].clone()).collect()
}

pub fn load_tensors(paths: &[PathBuf], spec: &PreprocessSpec) -> Outcome<Vec<Tensor>> {
    paths
        .iter()
        .map(|p| {
            let bytes = failure::read(p)?;
            preprocess(&bytes, spec).map_err(|e| Failure::new(Kind::Data, anyhow::anyhow!("{}: {e}", p.display())))
        })
        .collect()
}
