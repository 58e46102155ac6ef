//! Class-folder datasets: ingestion, seeded augmentation, leakage-guarded
//! splitting and a synthetic two-class generator.
//!
//! Manifest table format (UTF-8, tab separated):
//!
//! ```text
//! # edgeclass dataset manifest
//! # root	<dataset root>
//! # class	0	Monkeypox
//! # class	1	Others
//! path	class	origin	seed	source
//! Monkeypox/a.png	0	original	0	-
//! Monkeypox/a__aug1.png	0	augmented	83734	0
//! ```
//!
//! `source` is the row index (0-based, data rows only) of the original an
//! augmented item derives from.
#![allow(clippy::tabs_in_doc_comments)]

mod augment;
mod split;
mod synth;

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::decode_image;

pub use augment::{augment, augment_image, AugmentParams};
pub use split::{split, Partition, SplitPlan};
pub use synth::{synth_dataset, synth_image, SynthClass};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("dataset has no class directories with images")]
    EmptyDataset,
    #[error("class directory `{0}` contains no readable images")]
    EmptyClass(String),
    #[error("augmentation factor must be at least 1, got {0}")]
    InvalidFactor(usize),
    #[error("manifest already contains augmented items")]
    AlreadyAugmented,
    #[error("fold count must be at least 2, got {0}")]
    InvalidFolds(usize),
    #[error("class `{class}` has {count} original items, fewer than {folds} folds")]
    ClassTooSmall { class: String, count: usize, folds: usize },
    #[error("manifest line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub class: usize,
    pub origin: Origin,
    pub seed: u64,
    /// Index of the original this item was derived from.
    pub source: Option<usize>,
}

impl Item {
    pub fn original(path: impl Into<PathBuf>, class: usize) -> Self {
        Item {
            path: path.into(),
            class,
            origin: Origin::Original,
            seed: 0,
            source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub items: Vec<Item>,
}

/// Files skipped during ingestion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestReport {
    pub skipped: Vec<(PathBuf, String)>,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for it in &self.items {
            counts[it.class] += 1;
        }
        counts
    }

    pub fn originals(&self) -> impl Iterator<Item = (usize, &Item)> {
        self.items.iter().enumerate().filter(|(_, it)| it.origin == Origin::Original)
    }

    /// The original an item belongs to (itself for originals).
    pub fn group_of(&self, index: usize) -> usize {
        self.items[index].source.unwrap_or(index)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.class).collect()
    }

    pub fn abs_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.items[index].path)
    }

    /// Decodes an item, applying its augmentation if it has one.
    pub fn load_image(&self, index: usize, params: &AugmentParams) -> Result<RgbImage, DataError> {
        let item = &self.items[index];
        let base = self.group_of(index);
        let path = self.abs_path(base);
        let bytes = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
        let img = decode_image(&bytes).map_err(|e| DataError::Image {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        Ok(match item.origin {
            Origin::Original => img,
            Origin::Augmented => augment_image(&img, item.seed, params),
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("# edgeclass dataset manifest\n");
        let _ = writeln!(s, "# root\t{}", self.root.display());
        for (i, c) in self.classes.iter().enumerate() {
            let _ = writeln!(s, "# class\t{i}\t{c}");
        }
        s.push_str("path\tclass\torigin\tseed\tsource\n");
        for it in &self.items {
            let origin = match it.origin {
                Origin::Original => "original",
                Origin::Augmented => "augmented",
            };
            let source = it.source.map_or_else(|| "-".to_string(), |v| v.to_string());
            let _ = writeln!(s, "{}\t{}\t{origin}\t{}\t{source}", it.path.display(), it.class, it.seed);
        }
        s
    }

    pub fn from_table(text: &str) -> Result<DatasetManifest, DataError> {
        let mut m = DatasetManifest::default();
        for (i, line) in text.lines().enumerate() {
            let err = |reason: &str| DataError::Syntax {
                line: i + 1,
                reason: reason.to_string(),
            };
            if line.trim().is_empty() || line.starts_with("path\t") {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if line.starts_with('#') {
                match cols[..] {
                    ["# root", root] => m.root = PathBuf::from(root),
                    ["# class", idx, name] => {
                        if idx.parse::<usize>().ok() != Some(m.classes.len()) {
                            return Err(err("class indices must be consecutive from 0"));
                        }
                        m.classes.push(name.to_string());
                    }
                    _ => {}
                }
                continue;
            }
            let [path, class, origin, seed, source] = cols[..] else {
                return Err(err("expected 5 columns"));
            };
            let class: usize = class.parse().map_err(|_| err("bad class index"))?;
            if class >= m.classes.len() {
                return Err(err("class index out of range"));
            }
            let origin = match origin {
                "original" => Origin::Original,
                "augmented" => Origin::Augmented,
                _ => return Err(err("origin must be original or augmented")),
            };
            let source = match source {
                "-" => None,
                v => Some(v.parse().map_err(|_| err("bad source index"))?),
            };
            m.items.push(Item {
                path: PathBuf::from(path),
                class,
                origin,
                seed: seed.parse().map_err(|_| err("bad seed"))?,
                source,
            });
        }
        if let Some(bad) = m.items.iter().filter_map(|it| it.source).find(|&s| s >= m.items.len()) {
            return Err(DataError::Syntax {
                line: 0,
                reason: format!("source index {bad} out of range"),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_table()).map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<DatasetManifest, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_table(&text)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>, DataError> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| DataError::io(dir, e))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DataError::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Reads `root/<class>/<file>`; classes and files sorted by name. Files
/// that do not decode as PNG or JPEG are skipped and reported.
pub fn ingest(root: &Path) -> Result<(DatasetManifest, IngestReport), DataError> {
    let mut m = DatasetManifest {
        root: root.to_path_buf(),
        ..Default::default()
    };
    let mut report = IngestReport::default();
    for dir in sorted_entries(root)? {
        if !dir.file_type().map_err(|e| DataError::io(&dir.path(), e))?.is_dir() {
            continue;
        }
        let class = dir.file_name().to_string_lossy().into_owned();
        let index = m.classes.len();
        let before = m.items.len();
        for f in sorted_entries(&dir.path())? {
            let path = f.path();
            if !path.is_file() {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
            match decode_image(&bytes) {
                Ok(_) => m.items.push(Item::original(Path::new(&class).join(f.file_name()), index)),
                Err(e) => report.skipped.push((path, e.to_string())),
            }
        }
        if m.items.len() == before {
            return Err(DataError::EmptyClass(class));
        }
        m.classes.push(class);
    }
    if m.classes.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok((m, report))
}
